#pragma once

// Drives the command-line entry point in-process over a small end-to-end
// pipeline and collects the CSV artifacts it writes.

#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hmslab/cli.hpp"
#include "hmslab/util.hpp"

namespace hmslab::testing {

struct CliResult {
  int code = 0;
  std::string out, err;
};

inline CliResult run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("hmslab_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Runs gen-data, pretrain, identify-heads, train, eval, mask-sweep,
// export-shares and stats inside `dir`. Returns every CSV by file name, or
// throws with the failing command's stderr.
inline std::map<std::string, std::string> run_pipeline(const std::filesystem::path& dir) {
  const std::string d = dir.string() + "/";
  write_file(d + "corpus_spec.cfg",
             "n_train=60\nn_test=30\nimg_len=3\ntxt_len=3\nvocab_size=21\nseed=5\n");
  write_file(d + "model.cfg",
             "n_layers=2\nn_query_heads=4\nn_kv_heads=2\nhead_dim=4\nffn_dim=16\n"
             "vocab_size=21\nmax_seq_len=16\nadapter_rank=2\n");
  write_file(d + "run.cfg", "k=2\nepochs=1\nbatch_size=8\nbudget_img=0.2\nbudget_txt=0.2\nseed=3\n");
  const std::vector<std::vector<std::string>> steps = {
      {"gen-data", "--spec", d + "corpus_spec.cfg", "--out", d + "data"},
      {"pretrain", "--train", d + "data/train.jsonl", "--model-config", d + "model.cfg", "--steps",
       "4", "--batch", "4", "--seed", "2", "--out", d + "base.ckpt", "--loss-log",
       d + "pretrain_loss.csv"},
      {"identify-heads", "--base", d + "base.ckpt", "--corpus", d + "data/train.jsonl", "--k", "2",
       "--out", d + "heads_base.csv", "--shares-out", d + "shares_base.csv"},
      {"train", "--base", d + "base.ckpt", "--heads", d + "heads_base.csv", "--config",
       d + "run.cfg", "--train", d + "data/train.jsonl", "--test", d + "data/test.jsonl", "--out",
       d + "adapters.ckpt", "--history", d + "history.csv"},
      {"identify-heads", "--base", d + "base.ckpt", "--adapters", d + "adapters.ckpt", "--corpus",
       d + "data/train.jsonl", "--k", "2", "--out", d + "heads_tuned.csv", "--shares-out",
       d + "shares_tuned.csv"},
      {"eval", "--base", d + "base.ckpt", "--adapters", d + "adapters.ckpt", "--test",
       d + "data/test.jsonl", "--out", d + "report.txt"},
      {"mask-sweep", "--base", d + "base.ckpt", "--adapters", d + "adapters.ckpt", "--heads",
       d + "heads_tuned.csv", "--test", d + "data/test.jsonl", "--ks", "0,1,2", "--n-random", "2",
       "--out", d + "sweep.csv"},
      {"export-shares", "--base", d + "base.ckpt", "--adapters", d + "adapters.ckpt", "--corpus",
       d + "data/test.jsonl", "--top-n", "4", "--out-dir", d + "exports"},
      {"stats", "--heads-a", d + "heads_base.csv", "--heads-b", d + "heads_tuned.csv",
       "--shares-a", d + "shares_base.csv", "--shares-b", d + "shares_tuned.csv", "--out",
       d + "overlap.csv"},
  };
  for (const auto& args : steps) {
    const CliResult r = run(args);
    if (r.code != 0) throw std::runtime_error(args[0] + " failed: " + r.err);
  }
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.path().extension() == ".csv") {
      out[std::filesystem::relative(e.path(), dir).string()] = read_file(e.path());
    }
  }
  out["report.txt"] = read_file(d + "report.txt");
  return out;
}

}  // namespace hmslab::testing
