#pragma once

// Synthetic multimodal corpus with planted cue tokens.
//
// Each modality has a latent veracity drawn uniformly. Its segment holds one
// cue token among uniform distractors: with probability cue_strength the cue
// names the latent class, otherwise the opposite class. The multimodal label
// is FAKE iff either modality is fake.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hmslab/types.hpp"
#include "hmslab/util.hpp"

namespace hmslab {

struct CorpusSpec {
  std::size_t n_train = 2000;
  std::size_t n_test = 1000;
  std::size_t img_len = 8;
  std::size_t txt_len = 8;
  double cue_img = 0.65;
  double cue_txt = 0.95;
  std::size_t vocab_size = 96;
  std::uint64_t seed = 1;

  void validate() const;
  static CorpusSpec from_config(const KeyValues& kv);
  KeyValues to_config() const;
};

struct SyntheticSample {
  std::uint64_t id = 0;
  std::vector<std::size_t> img_tokens;
  std::vector<std::size_t> txt_tokens;
  Label y = Label::kReal;
  std::optional<Label> y_img;
  std::optional<Label> y_txt;

  friend bool operator==(const SyntheticSample&, const SyntheticSample&) = default;
};

struct Corpus {
  std::vector<SyntheticSample> train;
  std::vector<SyntheticSample> test;
};

Corpus generate_corpus(const CorpusSpec& spec);

struct Budget {
  double fraction_img = 0.01;
  double fraction_txt = 0.01;
};

// Number of revealed samples: 0 for fraction 0, else max(1, floor(f * n)).
std::size_t budget_count(double fraction, std::size_t n);

// Hides y_img / y_txt outside uniformly chosen subsets; y is kept.
std::vector<SyntheticSample> apply_budget(std::vector<SyntheticSample> train,
                                          const Budget& budget, std::uint64_t seed);

// JSON Lines, one sample per line:
//   {"id":3,"img":[..],"txt":[..],"y":"FAKE","y_img":"REAL"}
// y_img / y_txt are omitted when hidden.
std::string format_corpus(const std::vector<SyntheticSample>& samples);
std::vector<SyntheticSample> parse_corpus(const std::string& text,
                                          const std::string& source);
void write_corpus(const std::filesystem::path& path,
                  const std::vector<SyntheticSample>& samples);
std::vector<SyntheticSample> read_corpus(const std::filesystem::path& path);

// Samples whose label for `setting` is known (y, y_img, y_txt respectively).
std::optional<Label> gold_label(const SyntheticSample& s, Setting setting);

}  // namespace hmslab
