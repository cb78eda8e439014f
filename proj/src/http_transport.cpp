#include <mutex>

#include "headsteer/errors.hpp"
#include "headsteer/judge.hpp"

#ifdef HEADSTEER_HAVE_OPENSSL
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

namespace headsteer {

namespace {

class HttplibTransport final : public HttpTransport {
 public:
  HttplibTransport(std::string base_url, std::chrono::seconds timeout)
      : base_url_(std::move(base_url)), timeout_(timeout) {
#ifndef HEADSTEER_HAVE_OPENSSL
    if (base_url_.rfind("https://", 0) == 0)
      throw ConfigError("https judge endpoint requested but this build has no TLS support");
#endif
  }

  std::string post_json(const std::string& path, const std::string& body,
                        const std::map<std::string, std::string>& headers) override {
    // httplib::Client is not safe to share between threads; one per call.
    httplib::Client client(base_url_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    httplib::Headers h;
    for (const auto& [k, v] : headers)
      if (k != "Content-Type") h.emplace(k, v);
    auto res = client.Post(path, h, body, "application/json");
    if (!res) throw JudgeError("judge request failed: " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
      throw JudgeError("judge endpoint returned HTTP " + std::to_string(res->status));
    return res->body;
  }

 private:
  std::string base_url_;
  std::chrono::seconds timeout_;
};

}  // namespace

std::shared_ptr<HttpTransport> make_http_transport(const std::string& base_url, std::chrono::seconds timeout) {
  return std::make_shared<HttplibTransport>(base_url, timeout);
}

}  // namespace headsteer
