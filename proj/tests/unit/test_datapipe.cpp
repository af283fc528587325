#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "guiharness/datapipe.hpp"
#include "guiharness/scripted_policy.hpp"
#include "guiharness/sim_env.hpp"
#include "support.hpp"

using namespace guiharness;
using nlohmann::json;

namespace {

std::filesystem::path adapter_fixture(const std::string& id) {
  return testsupport::fixture_dir() / "adapters" / (id + ".jsonl");
}

std::string reply(const HighLevelAction& a, const std::string& thought = "Looking at the page first.") {
  return format_planner_reply(thought, a);
}

CotJob web_job() {
  CotJob j;
  j.id = "job-1";
  j.domain = "Web";
  j.source = "OS-Genesis (Web)";
  j.platform = Platform::web;
  j.goal = "Search for a mouse";
  j.observation = {"images/a.png", std::string("http://shop.local/"), 0};
  j.hint = {HighLevelAction{"Search box", ActionKind::type, "wireless mouse"}, Coordinate{0.4, 0.1}};
  return j;
}

Trajectory oracle_trajectory(const sim::TaskPack& pack, const std::string& task_id) {
  const auto& task = *pack.find_task(task_id);
  auto pol = sim::scripted_policy(*pack.graph, task, sim::oracle_solve(*pack.graph, task, 10).plan);
  sim::SimEnvironment env(pack.graph, task);
  return run_episode(task.id, task.goal, env, *pol.planner, *pol.grounder);
}

}  // namespace

TEST_SUITE("datapipe") {

TEST_CASE("every adapter ingests its ten-record fixture") {
  for (const auto& id : adapter_ids()) {
    if (id == "vwa_annotations") continue;  // covered from a live trajectory below
    IngestOptions opts;
    if (id == "instruction") {
      opts.domain = "Chart/Document QA";
      opts.source = "Ureader QA";
    }
    auto r = ingest(adapter_fixture(id), id, opts);
    CHECK_MESSAGE(r.samples.size() == 10, id);
    CHECK_MESSAGE(r.rejects.empty(), id << ": " << (r.rejects.empty() ? "" : r.rejects[0].reason));
    for (const auto& s : r.samples) CHECK_NOTHROW(validate(s));
    bool gui = id != "instruction" && id != "standard";
    CHECK(r.cot_jobs.size() == (gui ? r.samples.size() : 0));
    for (std::size_t i = 0; i < r.cot_jobs.size(); ++i) CHECK(r.cot_jobs[i].id == r.samples[i].id);
  }
}

TEST_CASE("os-genesis field mapping") {
  auto r = ingest(adapter_fixture("os_genesis_web"), "os_genesis_web");
  const auto& s = r.samples[1];
  CHECK(s.id == "osg-web-1");
  CHECK(s.domain == "Web");
  CHECK(s.source == "OS-Genesis (Web)");
  CHECK(s.modality == Modality::vision_language);
  REQUIRE(s.messages.size() == 2);
  CHECK(s.messages[0].parts[0].image_ref == "images/web_1.png");
  CHECK(s.messages[0].parts[1].text.find("**Current URL**: http://shop.local/p1") != std::string::npos);
  CHECK(s.messages[0].parts[1].text.find("step 1: click 'step 0'") != std::string::npos);
  auto out = parse_planner_output(s.messages[1].parts[0].text, {Platform::web, true});
  CHECK(out.action == HighLevelAction{"Search box", ActionKind::type, "wireless mouse"});
  CHECK(out.thought == "I need to type next.");
  CHECK(s.type_tags == std::vector<std::string>{"Instruction", "Thought", "Action"});
  // record 0 has no thought
  CHECK(r.samples[0].thought_optional);
  CHECK(r.samples[0].type_tags == std::vector<std::string>{"Instruction", "Action"});
  CHECK(r.cot_jobs[1].hint.coord == Coordinate{0.17, 0.25});
  CHECK(r.cot_jobs[1].cot_template == TemplateId::osgenesis_web_cot);

  auto m = ingest(adapter_fixture("os_genesis_mobile"), "os_genesis_mobile");
  CHECK(m.samples[3].domain == "Mobile");
  CHECK(m.cot_jobs[3].hint.action.kind == ActionKind::open_app);
  CHECK(m.cot_jobs[7].hint.action.value == "seconds=\"3s\"");
}

TEST_CASE("mind2web field mapping") {
  auto r = ingest(adapter_fixture("mm_mind2web"), "mm_mind2web");
  CHECK(r.samples[0].id == "ann0:u0");
  CHECK(r.samples[0].source == "MM-Mind2Web");
  CHECK(r.cot_jobs[2].hint.action.kind == ActionKind::type);  // SELECT
  CHECK(r.cot_jobs[2].hint.action.value == "Economy");
  CHECK(r.cot_jobs[5].hint.action.kind == ActionKind::press);
  CHECK(r.cot_jobs[5].hint.action.value == "Enter");
  CHECK_FALSE(r.cot_jobs[3].hint.coord.has_value());
  REQUIRE(r.cot_jobs[1].hint.coord.has_value());
  CHECK(r.cot_jobs[1].hint.coord->x == doctest::Approx(0.2));
  CHECK(r.cot_jobs[0].observation.url == "http://flights.local");
  CHECK(r.cot_jobs[0].cot_template == TemplateId::mind2web_cot);
}

TEST_CASE("aguvis calls") {
  auto r = ingest(adapter_fixture("aguvis"), "aguvis");
  CHECK(r.cot_jobs[0].hint.coord == Coordinate{0.12, 0.07});
  CHECK(r.cot_jobs[0].hint.action.element_description == "element 0");
  CHECK(r.cot_jobs[1].hint.action.value == "hello world");
  CHECK(r.cot_jobs[2].hint.action.value == "down");
  CHECK(r.cot_jobs[3].hint.action.value == "down");  // finger moves up, content scrolls down
  CHECK(r.cot_jobs[4].hint.action.kind == ActionKind::go_home);
  CHECK(r.cot_jobs[5].hint.action.kind == ActionKind::enter);
  CHECK(r.cot_jobs[7].hint.action.element_description == "element at (0.9, 0.1)");
  CHECK(r.cot_jobs[8].hint.action.kind == ActionKind::go_back);
  CHECK(r.cot_jobs[9].hint.action.kind == ActionKind::stop);
  CHECK_THROWS_AS(parse_aguvis_call("pyautogui.click(x=2, y=0.1)", Platform::web), Error);
  CHECK_THROWS_AS(parse_aguvis_call("pyautogui.teleport()", Platform::web), Error);
}

TEST_CASE("instruction records") {
  IngestOptions opts{"Chart/Document QA", "Ureader QA", std::nullopt, false};
  auto r = ingest(adapter_fixture("instruction"), "instruction", opts);
  CHECK(r.samples[0].type_tags == std::vector<std::string>{"Instruction", "Thought", "Answer"});
  CHECK(r.samples[1].thought_optional);
  CHECK(r.samples[4].modality == Modality::vision_language);
  CHECK(r.samples[4].messages[0].parts[0].image_ref == "charts/4.png");
  CHECK(r.samples[4].messages[0].parts[1].text == "Read bar 4");
  CHECK(r.samples[8].messages.size() == 4);
  CHECK(r.samples[0].domain == "Chart/Document QA");
  CHECK_THROWS_AS(ingest(adapter_fixture("instruction"), "instruction"), Error);
}

TEST_CASE("standard records round trip") {
  auto r = ingest(adapter_fixture("standard"), "standard");
  std::stringstream ss;
  write_samples(ss, r.samples);
  auto back = read_samples(ss);
  CHECK(back == r.samples);
}

TEST_CASE("bad records are rejected or thrown in strict mode") {
  std::vector<json> recs = {
      {{"id", "ok"}, {"instruction", "t"}, {"screenshot", "a.png"}, {"url", "http://x"}, {"action_type", "go_back"}},
      {{"id", "bad"}, {"instruction", "t"}, {"screenshot", "a.png"}, {"url", "http://x"}, {"action_type", "fly"}},
      {{"id", "nocoord"}, {"instruction", "t"}, {"screenshot", "a.png"}, {"url", "http://x"}, {"action_type", "click"},
       {"element", "x"}, {"coordinate", {{"x", 4}, {"y", 0}}}},
      json("not an object")};
  auto r = ingest_records(recs, "os_genesis_web");
  CHECK(r.samples.size() == 1);
  REQUIRE(r.rejects.size() == 3);
  CHECK(r.rejects[0].index == 1);
  CHECK(r.rejects[2].index == 3);
  try {
    ingest_records(recs, "os_genesis_web", {"", "", std::nullopt, true});
    FAIL("strict mode accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::AdapterSchemaError);
    CHECK(std::string(e.what()).find("record 1") != std::string::npos);
  }
  try {
    ingest_records({}, "nope");
    FAIL("unknown adapter accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownAdapter);
  }
}

TEST_CASE("sample validation") {
  StandardSample s;
  s.id = "x";
  s.domain = "d";
  s.messages = {{"user", {{ContentPart::Type::text, "q", ""}}}, {"user", {{ContentPart::Type::text, "q", ""}}}};
  s.type_tags = {"Instruction"};
  CHECK_THROWS_AS(validate(s), Error);
  s.messages[1].role = "assistant";
  CHECK_NOTHROW(validate(s));
  s.type_tags = {"Banana"};
  CHECK_THROWS_AS(validate(s), Error);
  s.type_tags = {"Instruction"};
  s.messages[0].parts.push_back({ContentPart::Type::image, "", "missing.png"});
  CHECK_THROWS_AS(validate(s, testsupport::data_dir()), Error);
  s.messages[0].parts.back().image_ref = "packs/mini-forum/assets/home.png";
  CHECK_NOTHROW(validate(s, testsupport::data_dir()));
}

TEST_CASE("equivalence") {
  HintAction a{HighLevelAction{"Search box", ActionKind::click, {}}, Coordinate{0.5, 0.5}};
  HintAction b{HighLevelAction{"the search field", ActionKind::click, {}}, Coordinate{0.53, 0.5}};
  CHECK(actions_equivalent(a, b));
  CHECK(actions_equivalent(b, a));
  b.coord = Coordinate{0.6, 0.5};
  CHECK_FALSE(actions_equivalent(a, b));
  b.coord.reset();
  a.coord.reset();
  CHECK_FALSE(actions_equivalent(a, b));
  b.action.element_description = "  search BOX ";
  CHECK(actions_equivalent(a, b));
  HintAction s1{HighLevelAction{"", ActionKind::stop, "success"}, {}};
  HintAction s2{HighLevelAction{"", ActionKind::stop, "completed"}, {}};
  CHECK(actions_equivalent(s1, s2));
  HintAction w1{HighLevelAction{"", ActionKind::wait, "seconds=\"5s\""}, {}};
  HintAction w2{HighLevelAction{"", ActionKind::wait, "5"}, {}};
  CHECK(actions_equivalent(w1, w2));
  HintAction k1{HighLevelAction{"", ActionKind::scroll, "down"}, {}};
  HintAction k2{HighLevelAction{"", ActionKind::scroll, "up"}, {}};
  CHECK_FALSE(actions_equivalent(k1, k2));
}

TEST_CASE("cot filter keeps the first matching attempt") {
  auto job = web_job();
  for (int k = 1; k <= 5; ++k) {
    std::vector<std::string> script;
    for (int i = 1; i < k; ++i) script.push_back(reply({"Search box", ActionKind::type, "keyboard"}));
    script.push_back(reply({"Search box", ActionKind::type, "wireless mouse"}));
    StubPlanner gen(script);
    StubGrounder grounder({{"Search box", {0.41, 0.11}}});
    auto out = augment_cot(job, gen, &grounder);
    CHECK(out.calls == k);
    CHECK(gen.calls() == k);
    REQUIRE(out.sample.has_value());
    CHECK_FALSE(out.discarded.has_value());
    CHECK(out.sample->type_tags == std::vector<std::string>{"Instruction", "Thought", "Action"});
  }
}

TEST_CASE("cot filter discards after five mismatches") {
  auto job = web_job();
  StubPlanner gen(StubPlanner::Fallback(
      [](const std::vector<Message>&, int i) { return i % 2 ? std::string("no block") : reply({"Cart", ActionKind::click, {}}); }));
  StubGrounder grounder({{"Cart", {0.9, 0.9}}});
  auto out = augment_cot(job, gen, &grounder);
  CHECK(out.calls == 5);
  CHECK_FALSE(out.sample.has_value());
  REQUIRE(out.discarded.has_value());
  CHECK(out.discarded->attempts.size() == 5);
  CHECK(out.discarded->reasons.size() == 5);
  CHECK(to_json(*out.discarded).at("id") == "job-1");
}

TEST_CASE("cot prompt carries the hint, leaked thoughts are rejected") {
  auto job = web_job();
  StubPlanner gen(std::vector<std::string>{
      reply({"Search box", ActionKind::type, "wireless mouse"}, "The Correct Action Hint says to type."),
      reply({"Search box", ActionKind::type, "wireless mouse"})});
  StubGrounder grounder({{"Search box", {0.4, 0.1}}});
  auto out = augment_cot(job, gen, &grounder);
  CHECK(out.calls == 2);
  REQUIRE(out.sample);
  auto reqs = gen.requests();
  CHECK(reqs[0][0].parts[1].text.find(format_action_block(job.hint.action)) != std::string::npos);
  // the training sample uses the evaluation prompt, not the hinted one
  CHECK(out.sample->messages[0].parts[1].text.find(format_action_block(job.hint.action)) == std::string::npos);
}

TEST_CASE("cot filter soundness over random schedules") {
  std::mt19937_64 rng(77);
  auto job = web_job();
  const std::vector<HighLevelAction> wrong = {{"Search box", ActionKind::type, "keyboard"},
                                              {"Logo", ActionKind::click, {}},
                                              {"", ActionKind::scroll, "down"}};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> script;
    int first_good = 0;
    for (int i = 1; i <= 5; ++i) {
      bool good = rng() % 4 == 0;
      if (good && !first_good) first_good = i;
      script.push_back(good ? reply(job.hint.action) : rng() % 5 == 0 ? "garbage" : reply(wrong[rng() % 3]));
    }
    StubPlanner gen(script);
    StubGrounder grounder({{"Search box", {0.4, 0.1}}, {"Logo", {0.05, 0.05}}});
    auto out = augment_cot(job, gen, &grounder);
    if (first_good) {
      CHECK(out.calls == first_good);
      REQUIRE(out.sample);
      auto kept = parse_planner_output(out.sample->messages.back().parts[0].text, {Platform::web, true});
      CHECK(actions_equivalent({kept.action, std::nullopt}, {job.hint.action, std::nullopt}));
    } else {
      CHECK(out.calls == 5);
      CHECK(out.discarded);
    }
  }
}

TEST_CASE("augment batch keeps order") {
  std::vector<CotJob> jobs;
  for (int i = 0; i < 8; ++i) {
    auto j = web_job();
    j.id = "j" + std::to_string(i);
    jobs.push_back(j);
  }
  StubPlanner gen(StubPlanner::Fallback([](const std::vector<Message>&, int) {
    return reply({"Search box", ActionKind::type, "wireless mouse"});
  }));
  StubGrounder grounder({{"Search box", {0.4, 0.1}}});
  auto outs = augment_batch(jobs, gen, &grounder, {}, 3);
  REQUIRE(outs.size() == 8);
  for (int i = 0; i < 8; ++i) CHECK(outs[i].sample->id == "j" + std::to_string(i));
}

TEST_CASE("replay verification") {
  auto pack = sim::load_pack(testsupport::pack_dir("mini-forum"));
  auto t = oracle_trajectory(pack, "forum-post-question");
  REQUIRE(t.success());
  sim::SimEnvironment env(pack.graph, *pack.find_task("forum-post-question"));
  auto ok = replay_verify(t, env);
  CHECK(ok.pass);
  CHECK_FALSE(ok.diverged_at.has_value());
  CHECK(ok.final_subgoals == t.final_subgoals());

  // nudge the click on the Ask button off the element
  auto mutant = t;
  int target = -1;
  for (auto& s : mutant.steps)
    if (s.grounded && s.grounded->kind == ActionKind::click && target < 0 && s.index > 0) {
      s.grounded->coord = Coordinate{0.99, 0.99};
      target = s.index;
    }
  REQUIRE(target >= 0);
  auto bad = replay_verify(mutant, env);
  CHECK_FALSE(bad.pass);
  CHECK(bad.diverged_at == target);

  auto failed = oracle_trajectory(pack, "forum-delete-cooking");
  CHECK_FALSE(replay_verify(failed, env).pass);
}

TEST_CASE("annotated trajectories ingest as one sample per executed step") {
  auto pack = sim::load_pack(testsupport::pack_dir("mini-forum"));
  std::stringstream ss;
  auto t = oracle_trajectory(pack, "forum-upvote-top");
  write_jsonl(ss, t);
  write_jsonl(ss, oracle_trajectory(pack, "forum-post-question"));
  std::vector<json> recs;
  for (std::string line; std::getline(ss, line);) recs.push_back(json::parse(line));
  auto r = ingest_records(recs, "vwa_annotations", {"", "", std::nullopt, true});
  auto t2 = oracle_trajectory(pack, "forum-post-question");
  CHECK(r.samples.size() == t.steps.size() + t2.steps.size());
  CHECK(r.samples[0].id == "forum-upvote-top:0");
  CHECK(r.samples[0].source == "VisualWebArena");
  CHECK(r.cot_jobs[1].previous_actions.size() == 1);
  auto first = parse_planner_output(r.samples[0].messages[1].parts[0].text, {Platform::web, true});
  CHECK(first.action == *t.steps[0].high_level);
}

}
