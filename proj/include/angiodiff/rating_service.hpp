// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "angiodiff/generation.hpp"
#include "angiodiff/study.hpp"

namespace angiodiff {

struct RaterInfo {
  std::string rater_id;
  RaterRole role = RaterRole::NR;
  std::string token;
};

/// Administrator-side study definition. Image ids are opaque and assigned
/// in a seeded shuffle, so they carry no condition or generation order.
struct StudyState {
  std::uint64_t seed = 0;
  std::vector<StudyImage> images;
  std::map<std::string, Verdict> verdicts;
  std::vector<RaterInfo> raters;
  std::string admin_token;
  /// Directory image files are resolved against.
  std::filesystem::path image_root;

  std::vector<StudyImage> retained() const;
  /// Seeded permutation of the retained image ids for one rater.
  std::vector<std::string> presentation_order(const std::string& rater_id) const;
  const RaterInfo* rater_by_token(const std::string& token) const;
  const StudyImage* image(const std::string& image_id) const;
};

/// Random 128-bit hex token.
std::string random_token();

/// Builds a study from a generation manifest. `verdicts` maps manifest file
/// paths to screening verdicts; files without a verdict are rejected unless
/// the map is empty, in which case every image is kept.
StudyState init_study(const GenerationManifest& generated, const std::map<std::string, Verdict>& verdicts,
                      const std::vector<std::pair<std::string, RaterRole>>& raters, std::uint64_t seed);

nlohmann::json study_state_to_json(const StudyState& state);
StudyState study_state_from_json(const nlohmann::json& j);
void save_study_state(const std::filesystem::path& path, const StudyState& state);
StudyState load_study_state(const std::filesystem::path& path);

/// What a rater may see about an image. Deliberately has no condition field.
struct BlindImage {
  std::string image_id;
  std::string image_url;
  std::size_t position = 0;  // 1-based
  std::size_t total = 0;
};

template <class T>
concept ExposesCondition = requires(const T& t) { t.condition; };
static_assert(!ExposesCondition<BlindImage>, "rater-facing payloads must not carry conditioning labels");

nlohmann::json to_json(const BlindImage& b);

/// Transport-independent rating service. All methods are thread-safe.
/// Ratings and audit events are appended to `<dir>/ratings.log` and
/// `<dir>/audit.log`; constructing a service over an existing directory
/// resumes from those logs.
class RatingService {
 public:
  struct Response {
    int status = 200;
    nlohmann::json body;
  };

  RatingService(StudyState state, std::filesystem::path dir);

  Response next(const std::string& token);
  Response rate(const std::string& token, const nlohmann::json& payload);
  Response progress(const std::string& token);
  /// Ratings file text (latest record per image and rater), admin only.
  std::optional<std::string> export_ratings(const std::string& admin_token);
  /// PNG bytes for an image already served to this rater.
  std::optional<std::string> image_bytes(const std::string& token, const std::string& image_id);

  std::vector<RatingRecord> ratings() const;
  const StudyState& state() const { return state_; }

 private:
  struct Session {
    std::vector<std::string> order;
    std::set<std::string> served;
    std::map<std::string, RatingRecord> rated;
  };

  Response unauthorized() const;
  void audit(const std::string& rater, const std::string& event, const std::string& image);
  void append_rating(const RatingRecord& r);
  std::vector<RatingRecord> ratings_locked() const;

  StudyState state_;
  std::filesystem::path dir_;
  std::map<std::string, Session> sessions_;
  mutable std::mutex mutex_;
};

struct ServeOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  /// Static files (e.g. the reader UI bundle) mounted at "/".
  std::optional<std::filesystem::path> ui_dir;
};

/// Runs the HTTP front end until the process is stopped:
/// GET /study/next, POST /study/rate, GET /study/progress,
/// GET /study/image/<id>, GET /admin/export. Sessions authenticate with
/// "Authorization: Bearer <token>".
void serve_study(RatingService& service, const ServeOptions& options);

class HttpStudyServer {
 public:
  explicit HttpStudyServer(RatingService& service, std::optional<std::filesystem::path> ui_dir = std::nullopt);
  ~HttpStudyServer();
  HttpStudyServer(const HttpStudyServer&) = delete;
  HttpStudyServer& operator=(const HttpStudyServer&) = delete;

  /// Binds to an ephemeral port on host and serves on a background thread.
  int start(const std::string& host = "127.0.0.1");
  /// Blocking listen.
  bool listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace angiodiff
