#include <doctest.h>

#include "cli_pipeline.hpp"
#include "hmslab/data.hpp"
#include "hmslab/util.hpp"

using namespace hmslab;
using testing::run;

TEST_SUITE("cli") {

TEST_CASE("pipeline runs end to end and reruns identically") {
  const auto a = testing::run_pipeline(testing::fresh_dir("cli_a"));
  const auto b = testing::run_pipeline(testing::fresh_dir("cli_b"));
  CHECK(a.size() == b.size());
  for (const auto& [name, text] : a) {
    CAPTURE(name);
    REQUIRE(b.count(name));
    CHECK(text == b.at(name));
    if (name != "report.txt") CHECK(text.rfind("# fingerprint=", 0) == 0);
  }
  for (const char* f : {"heads_base.csv", "history.csv", "sweep.csv", "overlap.csv",
                        "exports/heatmap_img.csv", "exports/ranked_text.csv", "pretrain_loss.csv"}) {
    CHECK(a.count(f));
  }
  CHECK(a.at("report.txt").find("MULTI.status=present") != std::string::npos);
}

TEST_CASE("identify-heads is byte-identical on rerun") {
  const auto dir = testing::fresh_dir("cli_idf");
  const std::string d = dir.string() + "/";
  testing::run_pipeline(dir);
  const std::vector<std::string> args = {"identify-heads", "--base", d + "base.ckpt", "--corpus",
                                         d + "data/test.jsonl", "--k", "3"};
  const auto r1 = run(args);
  const auto r2 = run(args);
  REQUIRE(r1.code == 0);
  CHECK(r1.out == r2.out);
  CHECK(r1.out.find("modality,rank,layer,head,score") != std::string::npos);
}

TEST_CASE("eval of oracle predictions scores 1.0") {
  const auto dir = testing::fresh_dir("cli_oracle");
  const std::string d = dir.string() + "/";
  REQUIRE(run({"gen-data", "--out", d + "data"}).code == 0);
  const auto test = read_corpus(d + "data/test.jsonl");
  std::string csv = "# fingerprint=0\nid,setting,label\n";
  for (const auto& s : test) {
    for (Setting st : kAllSettings) {
      if (const auto g = gold_label(s, st)) {
        csv += std::to_string(s.id) + "," + to_string(st) + "," + to_string(*g) + "\n";
      }
    }
  }
  write_file(d + "oracle.csv", csv);
  const auto r = run({"eval", "--predictions", d + "oracle.csv", "--test", d + "data/test.jsonl"});
  REQUIRE(r.code == 0);
  for (const char* s : {"MULTI", "IMG_ONLY", "TEXT_ONLY"}) {
    CHECK(r.out.find(std::string(s) + ".macro_f1=1\n") != std::string::npos);
  }
}

TEST_CASE("usage errors exit with code 1") {
  const auto unknown = run({"frobnicate"});
  CHECK(unknown.code == 1);
  CHECK(unknown.err.find("error: code=1 kind=usage") != std::string::npos);
  const auto flag = run({"gen-data", "--out", "x", "--bogus"});
  CHECK(flag.code == 1);
  CHECK(run({}).code == 1);
  const auto dir = testing::fresh_dir("cli_usage");
  const std::string d = dir.string() + "/";
  REQUIRE(run({"gen-data", "--out", d + "data"}).code == 0);
  const auto both = run({"eval", "--test", d + "data/test.jsonl"});
  CHECK(both.code == 1);
}

TEST_CASE("data errors exit with code 2") {
  const auto dir = testing::fresh_dir("cli_data");
  const std::string d = dir.string() + "/";
  write_file(d + "bad.jsonl", "{\"id\": 0}\n");
  const auto r = run({"eval", "--predictions", d + "none.csv", "--test", d + "bad.jsonl"});
  CHECK(r.code == 2);
  CHECK(r.err.find("kind=data") != std::string::npos);
  CHECK(run({"identify-heads", "--base", d + "missing.ckpt", "--corpus", d + "bad.jsonl"}).code == 2);
  write_file(d + "junk.ckpt", "not a checkpoint");
  REQUIRE(run({"gen-data", "--out", d + "data"}).code == 0);
  const auto ck = run({"identify-heads", "--base", d + "junk.ckpt", "--corpus", d + "data/test.jsonl"});
  CHECK(ck.code == 2);
  CHECK(ck.err.find("junk.ckpt") != std::string::npos);
}

TEST_CASE("help exits cleanly") {
  const auto r = run({"--help"});
  CHECK(r.code == 0);
  CHECK(r.out.find("identify-heads") != std::string::npos);
}

}  // TEST_SUITE
