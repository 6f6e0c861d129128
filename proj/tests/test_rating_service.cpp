// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <set>

#include <gtest/gtest.h>
#include <httplib.h>

#include "angiodiff/generation.hpp"
#include "angiodiff/image.hpp"
#include "angiodiff/rating_service.hpp"
#include "test_util.hpp"

using namespace angiodiff;

namespace {

const std::vector<std::pair<std::string, RaterRole>> kRaters = {{"NR1", RaterRole::NR}, {"NS1", RaterRole::NS}};

/// Eight generated images (two per condition) written as small PNGs; the
/// last one is screened out.
StudyState make_study(const test::TempDir& dir) {
  GenerationManifest m;
  m.base_dir = dir / "gen";
  std::vector<ConditionId> ids(kCanonicalConditions.begin(), kCanonicalConditions.end());
  m.images = plan_stratified(canonical_conditions(ids), 2, 1, 3);
  std::map<std::string, Verdict> verdicts;
  for (const auto& g : m.images) {
    write_png(m.resolve(g), GrayImage(8, 8, 100));
    verdicts[g.file] = Verdict::KEEP;
  }
  verdicts[m.images.back().file] = Verdict::EXCLUDE;
  return init_study(m, verdicts, kRaters, 11);
}

const std::string& token_of(const StudyState& s, const std::string& rater) {
  for (const auto& r : s.raters) {
    if (r.rater_id == rater) return r.token;
  }
  throw std::runtime_error("no rater");
}

bool mentions_condition(const nlohmann::json& j) {
  const auto text = j.dump();
  for (const char* word : {"circulation\"", "plane", "prompt", "angle", "AC", "PC", "condition"}) {
    if (text.find(word) != std::string::npos) return true;
  }
  return false;
}

nlohmann::json score(const std::string& image, int v) {
  return {{"image_id", image}, {"prox", v}, {"med", "NP"}, {"peri", std::to_string(v)}, {"external_circulation", false}};
}

}  // namespace

TEST(StudyState, OpaqueIdsAndPermutations) {
  test::TempDir dir("study-state");
  const auto s = make_study(dir);
  EXPECT_EQ(s.images.size(), 8u);
  EXPECT_EQ(s.retained().size(), 7u);
  std::set<std::string> retained;
  for (const auto& img : s.retained()) {
    retained.insert(img.image_id);
    EXPECT_EQ(img.image_id.find("AC"), std::string::npos);
    EXPECT_EQ(img.image_id.find("PC"), std::string::npos);
  }
  const auto a = s.presentation_order("NR1");
  const auto b = s.presentation_order("NS1");
  EXPECT_EQ(std::set<std::string>(a.begin(), a.end()), retained);
  EXPECT_EQ(a.size(), retained.size());
  EXPECT_EQ(std::set<std::string>(b.begin(), b.end()), retained);
  EXPECT_NE(a, b);
  EXPECT_EQ(a, s.presentation_order("NR1"));
  EXPECT_NE(token_of(s, "NR1"), token_of(s, "NS1"));
  EXPECT_NE(s.admin_token, token_of(s, "NR1"));
}

TEST(StudyState, JsonRoundTrip) {
  test::TempDir dir("study-json");
  const auto s = make_study(dir);
  save_study_state(dir / "state.json", s);
  const auto back = load_study_state(dir / "state.json");
  EXPECT_EQ(back.presentation_order("NS1"), s.presentation_order("NS1"));
  EXPECT_EQ(back.admin_token, s.admin_token);
  EXPECT_EQ(back.images.size(), s.images.size());
  EXPECT_EQ(back.images[0].condition, s.images[0].condition);
}

TEST(StudyState, MissingVerdictRejected) {
  GenerationManifest m;
  m.images = plan_stratified(canonical_conditions({ConditionId::AC_A}), 2, 1, 3);
  EXPECT_THROW(init_study(m, {{m.images[0].file, Verdict::KEEP}}, kRaters, 1), ValidationError);
  EXPECT_EQ(init_study(m, {}, kRaters, 1).retained().size(), 2u);
}

TEST(RatingService, BlindedFlowAndStatusCodes) {
  test::TempDir dir("svc-flow");
  RatingService svc(make_study(dir), dir / "svc");
  const auto& tok = token_of(svc.state(), "NR1");
  EXPECT_EQ(svc.next("bogus").status, 401);
  EXPECT_EQ(svc.rate("bogus", score("x", 3)).status, 401);

  const auto order = svc.state().presentation_order("NR1");
  auto first = svc.next(tok);
  ASSERT_EQ(first.status, 200);
  EXPECT_FALSE(mentions_condition(first.body)) << first.body.dump();
  EXPECT_EQ(first.body["image_id"], order[0]);
  EXPECT_EQ(first.body["position"], 1);
  EXPECT_EQ(first.body["total"], 7);

  // Not yet served.
  EXPECT_EQ(svc.rate(tok, score(order[1], 3)).status, 409);
  auto bad = score(order[0], 3);
  bad["prox"] = 7;
  bad["extra"] = 1;
  const auto r400 = svc.rate(tok, bad);
  EXPECT_EQ(r400.status, 400);
  EXPECT_TRUE(r400.body["errors"].contains("prox"));
  EXPECT_TRUE(r400.body["errors"].contains("extra"));
  EXPECT_EQ(svc.rate(tok, nlohmann::json::array()).status, 400);

  const auto ok = svc.rate(tok, score(order[0], 3));
  EXPECT_EQ(ok.status, 200);
  EXPECT_FALSE(ok.body["replaced"].get<bool>());
  const auto again = svc.rate(tok, score(order[0], 4));
  EXPECT_TRUE(again.body["replaced"].get<bool>());
  EXPECT_EQ(svc.progress(tok).body["rated"], 1);
  EXPECT_EQ(svc.next(tok).body["image_id"], order[1]);
  EXPECT_TRUE(svc.image_bytes(tok, order[1]).has_value());
  EXPECT_FALSE(svc.image_bytes(tok, order[3]).has_value());
  EXPECT_FALSE(svc.image_bytes(token_of(svc.state(), "NS1"), order[1]).has_value());

  const auto records = svc.ratings();
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(std::get<int>(records[0].segments[0]), 4);
  EXPECT_EQ(records[0].rater_role, RaterRole::NR);
}

TEST(RatingService, CompletingExportsOneRecordPerImageAndResumes) {
  test::TempDir dir("svc-done");
  const auto state = make_study(dir);
  {
    RatingService svc(state, dir / "svc");
    const auto& tok = token_of(state, "NS1");
    for (int i = 0; i < 3; ++i) {
      const auto n = svc.next(tok);
      ASSERT_EQ(svc.rate(tok, score(n.body["image_id"], 2 + i % 3)).status, 200);
    }
  }
  RatingService svc(state, dir / "svc");
  const auto& tok = token_of(state, "NS1");
  EXPECT_EQ(svc.progress(tok).body["rated"], 3);
  for (;;) {
    const auto n = svc.next(tok);
    if (n.body.contains("done")) break;
    ASSERT_EQ(svc.rate(tok, score(n.body["image_id"], 5)).status, 200);
  }
  EXPECT_FALSE(svc.export_ratings("wrong").has_value());
  const auto text = svc.export_ratings(state.admin_token);
  ASSERT_TRUE(text.has_value());
  const auto parsed = parse_ratings(*text);
  EXPECT_EQ(parsed.size(), state.retained().size());
  for (const auto& r : parsed) EXPECT_EQ(r.rater_id, "NS1");
  EXPECT_TRUE(std::filesystem::exists(dir / "svc/audit.log"));
}

TEST(RatingService, HttpEndpoints) {
  test::TempDir dir("svc-http");
  RatingService svc(make_study(dir), dir / "svc");
  HttpStudyServer server(svc);
  const int port = server.start();
  httplib::Client cli("127.0.0.1", port);
  const auto& tok = token_of(svc.state(), "NR1");
  const httplib::Headers auth = {{"Authorization", "Bearer " + tok}};

  EXPECT_EQ(cli.Get("/study/next")->status, 401);
  const auto next = cli.Get("/study/next", auth);
  ASSERT_TRUE(next);
  ASSERT_EQ(next->status, 200);
  const auto body = nlohmann::json::parse(next->body);
  EXPECT_FALSE(mentions_condition(body));
  const std::string id = body["image_id"];

  const auto img = cli.Get(body["image_url"].get<std::string>(), auth);
  ASSERT_TRUE(img);
  EXPECT_EQ(img->status, 200);
  EXPECT_EQ(img->body.substr(1, 3), "PNG");

  EXPECT_EQ(cli.Post("/study/rate", auth, "{not json", "application/json")->status, 400);
  const auto rated = cli.Post("/study/rate", auth, score(id, 4).dump(), "application/json");
  EXPECT_EQ(rated->status, 200);
  const auto prog = cli.Get("/study/progress", auth);
  EXPECT_EQ(nlohmann::json::parse(prog->body)["rated"], 1);

  EXPECT_EQ(cli.Get("/admin/export", auth)->status, 401);
  const auto exp = cli.Get("/admin/export", {{"Authorization", "Bearer " + svc.state().admin_token}});
  EXPECT_EQ(exp->status, 200);
  EXPECT_EQ(parse_ratings(exp->body).size(), 1u);
  server.stop();
}
