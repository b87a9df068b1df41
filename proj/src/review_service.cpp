#include "headbench/review_service.hpp"

#include <algorithm>

#include <httplib.h>

#include "headbench/error.hpp"

namespace headbench {

using nlohmann::json;

namespace {

ApiResponse error_response(int status, const std::string& message) {
  return {status, json{{"error", message}, {"status", status}}};
}

}  // namespace

json ReviewService::case_view(const AuditCase& c) const {
  json j = to_json(c, store_.registry());
  const auto verdict = store_.resolved(c.id);
  j["status"] = verdict ? "reviewed" : "pending";
  j["verdict"] = verdict ? to_json(*verdict, store_.registry()) : json(nullptr);
  return j;
}

ApiResponse ReviewService::list_cases(const CaseQuery& q) const {
  if (q.status && *q.status != "pending" && *q.status != "reviewed")
    return error_response(400, "status must be pending or reviewed");
  if (q.sort != "margin" && q.sort != "id" && q.sort != "none")
    return error_response(400, "sort must be margin, id or none");
  if (q.page < 1 || q.page_size < 1) return error_response(400, "page and page_size must be >= 1");
  std::optional<CaseOrigin> origin;
  std::optional<ClassId> assigned;
  try {
    if (q.origin) origin = parse_origin(*q.origin);
    if (q.assigned) assigned = store_.registry().index_of(*q.assigned);
  } catch (const ValidationError& e) {
    return error_response(400, e.what());
  }

  const auto resolved = store_.resolved_all();
  std::vector<const AuditCase*> selected;
  for (const auto& c : store_.cases()) {
    if (origin && c.origin != *origin) continue;
    if (assigned && c.assigned != *assigned) continue;
    if (q.status) {
      const bool reviewed = resolved.count(c.id) > 0;
      if ((*q.status == "reviewed") != reviewed) continue;
    }
    selected.push_back(&c);
  }
  if (q.sort == "margin")
    std::stable_sort(selected.begin(), selected.end(), [](auto* a, auto* b) { return a->margin < b->margin; });
  else if (q.sort == "id")
    std::stable_sort(selected.begin(), selected.end(), [](auto* a, auto* b) { return a->id < b->id; });

  json items = json::array();
  const std::size_t begin = (q.page - 1) * q.page_size;
  for (std::size_t i = begin; i < std::min(selected.size(), begin + q.page_size); ++i) items.push_back(case_view(*selected[i]));
  return {200, json{{"items", items}, {"page", q.page}, {"page_size", q.page_size}, {"total", selected.size()}}};
}

ApiResponse ReviewService::get_case(const std::string& id) const {
  try {
    const auto& c = store_.find_case(id);
    json j = case_view(c);
    json active = json::array();
    for (const auto& v : store_.active(id)) active.push_back(to_json(v, store_.registry()));
    j["active_verdicts"] = active;
    return {200, j};
  } catch (const NotFoundError& e) {
    return error_response(404, e.what());
  }
}

ApiResponse ReviewService::post_verdict(const std::string& id, const std::string& body) {
  try {
    store_.find_case(id);
  } catch (const NotFoundError& e) {
    return error_response(404, e.what());
  }
  Verdict v;
  try {
    const json j = json::parse(body);
    v = verdict_from_json(j, store_.registry());
    if (v.case_id.empty()) v.case_id = id;
    if (v.case_id != id) return error_response(400, "case_id in body does not match the URL");
  } catch (const json::exception& e) {
    return error_response(400, std::string("malformed JSON: ") + e.what());
  } catch (const ValidationError& e) {
    return error_response(400, e.what());
  }
  try {
    store_.record(v);
  } catch (const RuleViolation& e) {
    return error_response(409, e.what());
  } catch (const NotFoundError& e) {
    return error_response(404, e.what());
  } catch (const ValidationError& e) {
    return error_response(400, e.what());
  } catch (const IoError& e) {
    return error_response(500, e.what());
  }
  const auto stored = store_.resolved(id);
  return {200, json{{"ok", true}, {"verdict", to_json(*stored, store_.registry())}}};
}

ApiResponse ReviewService::summary() const {
  auto s = summarize(store_);
  json j = to_json(s, store_.registry());
  j["conflicts"] = store_.conflicts();
  return {200, j};
}

ApiResponse ReviewService::heatmap() const {
  return {200, to_json(directional_matrix(store_, store_.cases(), store_.registry().size()), store_.registry())};
}

ApiResponse ReviewService::progress() const {
  const auto total = store_.cases().size();
  const auto reviewed = store_.reviewed_count();
  return {200, json{{"total", total}, {"reviewed", reviewed}, {"pending", total - reviewed}}};
}

namespace {

void send(httplib::Response& res, const ApiResponse& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

std::optional<std::size_t> parse_size(const std::string& s) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoul(s, &pos);
    if (pos != s.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace

std::unique_ptr<httplib::Server> make_http_server(ReviewService& service,
                                                  const std::optional<std::filesystem::path>& images_root) {
  auto server = std::make_unique<httplib::Server>();

  server->Get("/api/cases", [&service](const httplib::Request& req, httplib::Response& res) {
    CaseQuery q;
    if (req.has_param("status")) q.status = req.get_param_value("status");
    if (req.has_param("origin")) q.origin = req.get_param_value("origin");
    if (req.has_param("class")) q.assigned = req.get_param_value("class");
    if (req.has_param("sort")) q.sort = req.get_param_value("sort");
    for (auto [key, target] : {std::pair{"page", &q.page}, std::pair{"page_size", &q.page_size}}) {
      if (!req.has_param(key)) continue;
      auto v = parse_size(req.get_param_value(key));
      if (!v) return send(res, {400, json{{"error", std::string("invalid ") + key}, {"status", 400}}});
      *target = *v;
    }
    send(res, service.list_cases(q));
  });
  server->Get(R"(/api/cases/([^/]+))", [&service](const httplib::Request& req, httplib::Response& res) {
    send(res, service.get_case(req.matches[1]));
  });
  server->Post(R"(/api/cases/([^/]+)/verdict)", [&service](const httplib::Request& req, httplib::Response& res) {
    send(res, service.post_verdict(req.matches[1], req.body));
  });
  server->Get("/api/summary", [&service](const httplib::Request&, httplib::Response& res) { send(res, service.summary()); });
  server->Get("/api/heatmap", [&service](const httplib::Request&, httplib::Response& res) { send(res, service.heatmap()); });
  server->Get("/api/progress", [&service](const httplib::Request&, httplib::Response& res) { send(res, service.progress()); });

  if (images_root) server->set_mount_point("/images", images_root->string());
  return server;
}

}  // namespace headbench
