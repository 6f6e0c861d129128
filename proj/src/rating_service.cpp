// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#include "angiodiff/rating_service.hpp"

#include <openssl/rand.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

#include "angiodiff/common.hpp"

namespace angiodiff {

std::string random_token() {
  std::array<unsigned char, 16> bytes{};
  if (RAND_bytes(bytes.data(), static_cast<int>(bytes.size())) != 1) {
    throw std::runtime_error("RAND_bytes failed");
  }
  std::string out;
  for (auto b : bytes) out += fmt::format("{:02x}", b);
  return out;
}

std::vector<StudyImage> StudyState::retained() const {
  std::vector<StudyImage> out;
  for (const auto& img : images) {
    const auto it = verdicts.find(img.image_id);
    if (it != verdicts.end() && it->second == Verdict::KEEP) out.push_back(img);
  }
  return out;
}

std::vector<std::string> StudyState::presentation_order(const std::string& rater_id) const {
  std::vector<std::string> ids;
  for (const auto& img : retained()) ids.push_back(img.image_id);
  std::sort(ids.begin(), ids.end());
  std::mt19937_64 rng(derive_seed(seed, "order:" + rater_id));
  std::shuffle(ids.begin(), ids.end(), rng);
  return ids;
}

const RaterInfo* StudyState::rater_by_token(const std::string& token) const {
  if (token.empty()) return nullptr;
  for (const auto& r : raters) {
    if (r.token == token) return &r;
  }
  return nullptr;
}

const StudyImage* StudyState::image(const std::string& image_id) const {
  for (const auto& img : images) {
    if (img.image_id == image_id) return &img;
  }
  return nullptr;
}

StudyState init_study(const GenerationManifest& generated, const std::map<std::string, Verdict>& verdicts,
                      const std::vector<std::pair<std::string, RaterRole>>& raters, std::uint64_t seed) {
  if (generated.images.empty()) throw ValidationError("study needs at least one generated image");
  if (raters.empty()) throw ValidationError("study needs at least one rater");
  StudyState state;
  state.seed = seed;
  state.image_root = generated.base_dir;
  state.admin_token = random_token();
  std::vector<std::size_t> order(generated.images.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, "image-ids"));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<StudyImage> images(generated.images.size());
  for (std::size_t slot = 0; slot < order.size(); ++slot) {
    const auto& g = generated.images[order[slot]];
    StudyImage img{fmt::format("IMG{:04d}", slot + 1), g.file, g.condition};
    Verdict verdict = Verdict::KEEP;
    if (!verdicts.empty()) {
      const auto it = verdicts.find(g.file);
      if (it == verdicts.end()) throw ValidationError(fmt::format("no screening verdict for {}", g.file));
      verdict = it->second;
    }
    state.verdicts[img.image_id] = verdict;
    images[slot] = std::move(img);
  }
  state.images = std::move(images);
  std::set<std::string> seen;
  for (const auto& [id, role] : raters) {
    if (id.empty() || !seen.insert(id).second) throw ValidationError(fmt::format("duplicate or empty rater id '{}'", id));
    state.raters.push_back({id, role, random_token()});
  }
  return state;
}

nlohmann::json study_state_to_json(const StudyState& s) {
  nlohmann::json images = nlohmann::json::array();
  for (const auto& img : s.images) {
    const auto& c = img.condition;
    images.push_back({{"image_id", img.image_id},
                      {"file", img.file},
                      {"verdict", s.verdicts.at(img.image_id) == Verdict::KEEP ? "KEEP" : "EXCLUDE"},
                      {"condition",
                       {{"circulation", to_string(c.circulation)},
                        {"plane", to_string(c.plane)},
                        {"primary_angle_deg", c.primary_angle_deg},
                        {"secondary_angle_deg", c.secondary_angle_deg},
                        {"prompt", c.prompt}}}});
  }
  nlohmann::json raters = nlohmann::json::array();
  for (const auto& r : s.raters) {
    raters.push_back({{"rater_id", r.rater_id}, {"role", to_string(r.role)}, {"token", r.token}});
  }
  return {{"seed", s.seed},
          {"image_root", s.image_root.string()},
          {"admin_token", s.admin_token},
          {"images", images},
          {"raters", raters}};
}

StudyState study_state_from_json(const nlohmann::json& j) {
  StudyState s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.image_root = j.at("image_root").get<std::string>();
  s.admin_token = j.at("admin_token").get<std::string>();
  for (const auto& img : j.at("images")) {
    StudyImage si;
    si.image_id = img.at("image_id").get<std::string>();
    si.file = img.at("file").get<std::string>();
    const auto& c = img.at("condition");
    si.condition.circulation = parse_circulation(c.at("circulation").get<std::string>());
    si.condition.plane = parse_plane(c.at("plane").get<std::string>());
    si.condition.primary_angle_deg = c.at("primary_angle_deg").get<double>();
    si.condition.secondary_angle_deg = c.at("secondary_angle_deg").get<double>();
    si.condition.prompt = c.at("prompt").get<std::string>();
    const auto verdict = img.at("verdict").get<std::string>();
    if (verdict != "KEEP" && verdict != "EXCLUDE") throw ValidationError(fmt::format("bad verdict '{}'", verdict));
    s.verdicts[si.image_id] = verdict == "KEEP" ? Verdict::KEEP : Verdict::EXCLUDE;
    s.images.push_back(std::move(si));
  }
  for (const auto& r : j.at("raters")) {
    s.raters.push_back({r.at("rater_id").get<std::string>(), parse_rater_role(r.at("role").get<std::string>()),
                        r.at("token").get<std::string>()});
  }
  return s;
}

void save_study_state(const std::filesystem::path& path, const StudyState& state) {
  write_text_file(path, study_state_to_json(state).dump(2) + "\n");
}

StudyState load_study_state(const std::filesystem::path& path) {
  try {
    return study_state_from_json(nlohmann::json::parse(read_text_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

nlohmann::json to_json(const BlindImage& b) {
  return {{"image_id", b.image_id},
          {"image_url", b.image_url},
          {"position", b.position},
          {"total", b.total},
          {"segments", {"prox", "med", "peri"}},
          {"entries", {"1", "2", "3", "4", "5", "NP", "NA"}}};
}

RatingService::RatingService(StudyState state, std::filesystem::path dir)
    : state_(std::move(state)), dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
  for (const auto& r : state_.raters) sessions_[r.rater_id].order = state_.presentation_order(r.rater_id);
  const auto log = dir_ / "ratings.log";
  if (std::filesystem::exists(log)) {
    for (auto& r : parse_ratings(read_text_file(log))) {
      auto it = sessions_.find(r.rater_id);
      if (it == sessions_.end()) continue;
      it->second.served.insert(r.image_id);
      it->second.rated[r.image_id] = std::move(r);
    }
  } else {
    std::ofstream(log) << "#image_id\trater_id\trater_role\tprox\tmed\tperi\texternal_circulation\ttimestamp\n";
  }
  const auto audit_log = dir_ / "audit.log";
  if (std::filesystem::exists(audit_log)) {
    std::ifstream in(audit_log);
    std::string line;
    while (std::getline(in, line)) {
      const auto f = split(line, '\t');
      if (f.size() == 4 && f[2] == "serve") {
        if (auto it = sessions_.find(f[1]); it != sessions_.end()) it->second.served.insert(f[3]);
      }
    }
  }
  audit("-", "start", "-");
}

void RatingService::audit(const std::string& rater, const std::string& event, const std::string& image) {
  std::ofstream(dir_ / "audit.log", std::ios::app) << iso8601_now() << '\t' << rater << '\t' << event << '\t'
                                                   << image << '\n';
}

void RatingService::append_rating(const RatingRecord& r) {
  auto line = serialize_ratings({r});
  line.erase(0, line.find('\n') + 1);
  std::ofstream(dir_ / "ratings.log", std::ios::app) << line;
}

RatingService::Response RatingService::unauthorized() const {
  return {401, {{"error", "missing or unknown bearer token"}}};
}

RatingService::Response RatingService::next(const std::string& token) {
  std::lock_guard lock(mutex_);
  const auto* rater = state_.rater_by_token(token);
  if (!rater) return unauthorized();
  auto& s = sessions_.at(rater->rater_id);
  for (std::size_t i = 0; i < s.order.size(); ++i) {
    const auto& id = s.order[i];
    if (s.rated.count(id)) continue;
    if (s.served.insert(id).second) audit(rater->rater_id, "serve", id);
    const BlindImage blind{id, "/study/image/" + id, i + 1, s.order.size()};
    return {200, to_json(blind)};
  }
  return {200, {{"done", true}, {"total", s.order.size()}}};
}

RatingService::Response RatingService::rate(const std::string& token, const nlohmann::json& payload) {
  std::lock_guard lock(mutex_);
  const auto* rater = state_.rater_by_token(token);
  if (!rater) return unauthorized();
  auto& s = sessions_.at(rater->rater_id);
  nlohmann::json errors = nlohmann::json::object();
  RatingRecord r;
  r.rater_id = rater->rater_id;
  r.rater_role = rater->role;
  if (!payload.is_object()) return {400, {{"errors", {{"body", "expected a JSON object"}}}}};
  if (!payload.contains("image_id") || !payload["image_id"].is_string()) {
    errors["image_id"] = "required string";
  } else {
    r.image_id = payload["image_id"].get<std::string>();
  }
  constexpr std::array<const char*, 3> fields = {"prox", "med", "peri"};
  for (std::size_t i = 0; i < 3; ++i) {
    if (!payload.contains(fields[i])) {
      errors[fields[i]] = "required: Likert score 1-5, NP or NA";
      continue;
    }
    const auto& v = payload[fields[i]];
    std::string text;
    if (v.is_number_integer()) {
      text = std::to_string(v.get<long long>());
    } else if (v.is_string()) {
      text = v.get<std::string>();
    }
    try {
      r.segments[i] = parse_entry(text, fields[i]);
    } catch (const ValidationError& e) {
      errors[fields[i]] = e.what();
    }
  }
  if (payload.contains("external_circulation")) {
    const auto& v = payload["external_circulation"];
    if (v.is_boolean()) {
      r.external_circulation = v.get<bool>();
    } else if (v.is_number_integer() && (v.get<int>() == 0 || v.get<int>() == 1)) {
      r.external_circulation = v.get<int>() == 1;
    } else {
      errors["external_circulation"] = "expected true/false or 0/1";
    }
  }
  if (payload.contains("timestamp")) {
    if (payload["timestamp"].is_string() && !payload["timestamp"].get<std::string>().empty() &&
        payload["timestamp"].get<std::string>().find_first_of("\t\n") == std::string::npos) {
      r.timestamp = payload["timestamp"].get<std::string>();
    } else {
      errors["timestamp"] = "expected an ISO-8601 string";
    }
  }
  for (const auto& [key, value] : payload.items()) {
    static const std::set<std::string> known = {"image_id", "prox", "med", "peri", "external_circulation", "timestamp"};
    if (!known.count(key)) errors[key] = "unknown field";
  }
  if (!errors.empty()) {
    audit(rater->rater_id, "reject", r.image_id.empty() ? "-" : r.image_id);
    return {400, {{"errors", errors}}};
  }
  if (!s.served.count(r.image_id)) {
    audit(rater->rater_id, "reject", r.image_id);
    return {409, {{"errors", {{"image_id", "image has not been served to this rater"}}}}};
  }
  if (r.timestamp.empty()) r.timestamp = iso8601_now();
  const bool replace = s.rated.count(r.image_id) > 0;
  append_rating(r);
  audit(rater->rater_id, replace ? "replace" : "rate", r.image_id);
  s.rated[r.image_id] = r;
  return {200, {{"ok", true}, {"replaced", replace}, {"rated", s.rated.size()}, {"total", s.order.size()}}};
}

RatingService::Response RatingService::progress(const std::string& token) {
  std::lock_guard lock(mutex_);
  const auto* rater = state_.rater_by_token(token);
  if (!rater) return unauthorized();
  const auto& s = sessions_.at(rater->rater_id);
  return {200, {{"rater_id", rater->rater_id}, {"rated", s.rated.size()}, {"total", s.order.size()}}};
}

std::vector<RatingRecord> RatingService::ratings_locked() const {
  std::vector<RatingRecord> out;
  for (const auto& [rater, s] : sessions_) {
    for (const auto& id : s.order) {
      if (const auto it = s.rated.find(id); it != s.rated.end()) out.push_back(it->second);
    }
  }
  return out;
}

std::vector<RatingRecord> RatingService::ratings() const {
  std::lock_guard lock(mutex_);
  return ratings_locked();
}

std::optional<std::string> RatingService::export_ratings(const std::string& admin_token) {
  std::lock_guard lock(mutex_);
  if (admin_token.empty() || admin_token != state_.admin_token) return std::nullopt;
  audit("admin", "export", "-");
  return serialize_ratings(ratings_locked());
}

std::optional<std::string> RatingService::image_bytes(const std::string& token, const std::string& image_id) {
  std::filesystem::path path;
  {
    std::lock_guard lock(mutex_);
    const auto* rater = state_.rater_by_token(token);
    if (!rater || !sessions_.at(rater->rater_id).served.count(image_id)) return std::nullopt;
    const auto* img = state_.image(image_id);
    if (!img) return std::nullopt;
    path = state_.image_root / img->file;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  return std::string(std::istreambuf_iterator<char>(in), {});
}

struct HttpStudyServer::Impl {
  RatingService& service;
  httplib::Server server;
  std::thread thread;

  explicit Impl(RatingService& s) : service(s) {}
};

namespace {

std::string bearer(const httplib::Request& req) {
  const auto h = req.get_header_value("Authorization");
  constexpr std::string_view prefix = "Bearer ";
  if (h.rfind(prefix, 0) != 0) return {};
  return h.substr(prefix.size());
}

void reply(httplib::Response& res, const RatingService::Response& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

}  // namespace

HttpStudyServer::HttpStudyServer(RatingService& service, std::optional<std::filesystem::path> ui_dir)
    : impl_(std::make_unique<Impl>(service)) {
  auto& svc = impl_->service;
  auto& srv = impl_->server;
  srv.Get("/study/next", [&svc](const httplib::Request& req, httplib::Response& res) { reply(res, svc.next(bearer(req))); });
  srv.Get("/study/progress",
          [&svc](const httplib::Request& req, httplib::Response& res) { reply(res, svc.progress(bearer(req))); });
  srv.Post("/study/rate", [&svc](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception&) {
      reply(res, {400, {{"errors", {{"body", "malformed JSON"}}}}});
      return;
    }
    reply(res, svc.rate(bearer(req), body));
  });
  srv.Get(R"(/study/image/([A-Za-z0-9]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
    const auto bytes = svc.image_bytes(bearer(req), req.matches[1]);
    if (!bytes) {
      res.status = 404;
      res.set_content(R"({"error":"image not available to this session"})", "application/json");
      return;
    }
    res.set_content(*bytes, "image/png");
  });
  srv.Get("/admin/export", [&svc](const httplib::Request& req, httplib::Response& res) {
    const auto text = svc.export_ratings(bearer(req));
    if (!text) {
      res.status = 401;
      res.set_content(R"({"error":"admin token required"})", "application/json");
      return;
    }
    res.set_content(*text, "text/tab-separated-values");
  });
  if (ui_dir) srv.set_mount_point("/", ui_dir->string());
}

HttpStudyServer::~HttpStudyServer() { stop(); }

int HttpStudyServer::start(const std::string& host) {
  const int port = impl_->server.bind_to_any_port(host);
  if (port < 0) throw std::runtime_error("cannot bind rating service");
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

bool HttpStudyServer::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

void HttpStudyServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

void serve_study(RatingService& service, const ServeOptions& options) {
  HttpStudyServer server(service, options.ui_dir);
  if (!server.listen(options.host, options.port)) {
    throw std::runtime_error(fmt::format("cannot listen on {}:{}", options.host, options.port));
  }
}

}  // namespace angiodiff
