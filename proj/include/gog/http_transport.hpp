#pragma once

// cpp-httplib transport. Kept out of oracle_clients.hpp so code that only
// needs the mocks does not pull in the HTTP stack. Define
// CPPHTTPLIB_OPENSSL_SUPPORT (and link OpenSSL) for https endpoints.

#include <chrono>
#include <string>

#include <httplib.h>

#include "gog/errors.hpp"
#include "gog/oracle_clients.hpp"

namespace gog {

class HttplibTransport final : public Transport {
 public:
  HttpResponse post(const HttpRequest& request) override {
    const auto scheme_end = request.url.find("://");
    if (scheme_end == std::string::npos) throw TransportError("invalid url: " + request.url);
    const auto path_begin = request.url.find('/', scheme_end + 3);
    const std::string origin = request.url.substr(0, path_begin);
    const std::string path = path_begin == std::string::npos ? "/" : request.url.substr(path_begin);

    httplib::Client client(origin);
    if (!client.is_valid()) throw TransportError("unsupported endpoint: " + origin);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(request.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(request.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    httplib::Headers headers;
    std::string content_type = "application/json";
    for (const auto& [k, v] : request.headers) {
      if (k == "Content-Type") {
        content_type = v;
      } else {
        headers.emplace(k, v);
      }
    }
    auto res = client.Post(path, headers, request.body, content_type);
    if (!res) throw TransportError("request to " + origin + " failed: " + httplib::to_string(res.error()));
    return {res->status, res->body};
  }
};

}  // namespace gog
