#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <string>

namespace distill {

struct HttpResponse {
    int status = 0;
    std::string body;
};

// Minimal JSON-over-HTTP client. base_url is scheme://host[:port][/prefix];
// request paths are appended to the prefix. Connection-level failures raise
// TransportError; any HTTP status is returned to the caller.
class HttpJsonClient {
public:
    explicit HttpJsonClient(const std::string& base_url,
                            std::chrono::milliseconds timeout = std::chrono::seconds(120));
    ~HttpJsonClient();
    HttpJsonClient(HttpJsonClient&&) noexcept;
    HttpJsonClient& operator=(HttpJsonClient&&) noexcept;

    HttpResponse post(const std::string& path, const std::string& body,
                      const std::map<std::string, std::string>& headers = {}) const;
    HttpResponse get(const std::string& path, const std::map<std::string, std::string>& headers = {}) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace distill
