#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "headbench/audit.hpp"

namespace httplib {
class Server;
}

namespace headbench {

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

struct CaseQuery {
  std::optional<std::string> status;  // pending | reviewed
  std::optional<std::string> origin;  // discordant | agreement_sample
  std::optional<std::string> assigned;  // class name filter
  std::string sort = "margin";        // margin | id | none
  std::size_t page = 1;
  std::size_t page_size = 50;
};

// Transport-independent handlers for the review workflow. Every mutation goes through the
// store's single appender, so handlers may run concurrently.
class ReviewService {
 public:
  explicit ReviewService(VerdictStore& store) : store_(store) {}

  ApiResponse list_cases(const CaseQuery& query) const;
  ApiResponse get_case(const std::string& id) const;
  ApiResponse post_verdict(const std::string& id, const std::string& body);
  ApiResponse summary() const;
  ApiResponse heatmap() const;
  ApiResponse progress() const;

 private:
  nlohmann::json case_view(const AuditCase& c) const;
  VerdictStore& store_;
};

// GET  /api/cases, /api/cases/{id}, /api/summary, /api/heatmap, /api/progress, /images/{ref}
// POST /api/cases/{id}/verdict
std::unique_ptr<httplib::Server> make_http_server(ReviewService& service,
                                                  const std::optional<std::filesystem::path>& images_root);

}  // namespace headbench
