#include "hmslab/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "hmslab/error.hpp"
#include "hmslab/model.hpp"

namespace hmslab {

namespace {

std::vector<std::size_t> make_segment(std::mt19937_64& rng, std::size_t len,
                                      std::size_t begin, std::size_t end,
                                      std::size_t cue) {
  std::uniform_int_distribution<std::size_t> distractor(begin + 2, end - 1);
  std::vector<std::size_t> seg(len);
  for (auto& t : seg) t = distractor(rng);
  std::uniform_int_distribution<std::size_t> where(0, len - 1);
  seg[where(rng)] = cue;
  return seg;
}

SyntheticSample make_sample(const CorpusSpec& spec, const TokenLayout& layout,
                            std::uint64_t id) {
  std::mt19937_64 rng(mix_seed(spec.seed, id));
  std::bernoulli_distribution coin(0.5);
  std::bernoulli_distribution img_clean(spec.cue_img);
  std::bernoulli_distribution txt_clean(spec.cue_txt);

  SyntheticSample s;
  s.id = id;
  const Label img = coin(rng) ? Label::kFake : Label::kReal;
  const Label txt = coin(rng) ? Label::kFake : Label::kReal;
  auto flip = [](Label l) { return l == Label::kReal ? Label::kFake : Label::kReal; };
  const Label img_cue = img_clean(rng) ? img : flip(img);
  const Label txt_cue = txt_clean(rng) ? txt : flip(txt);
  s.img_tokens = make_segment(rng, spec.img_len, layout.img_begin, layout.img_end,
                              layout.img_cue(img_cue));
  s.txt_tokens = make_segment(rng, spec.txt_len, layout.txt_begin, layout.txt_end,
                              layout.txt_cue(txt_cue));
  s.y_img = img;
  s.y_txt = txt;
  s.y = or_label(img, txt);
  return s;
}

std::size_t parse_token(const nlohmann::json& v, const std::string& where) {
  if (!v.is_number_unsigned()) fail_data(where + ": token ids must be non-negative integers");
  return v.get<std::size_t>();
}

}  // namespace

void CorpusSpec::validate() const {
  if (img_len == 0 || txt_len == 0) fail_usage("segment length must be positive");
  if (n_train == 0) fail_usage("n_train must be positive");
  for (double c : {cue_img, cue_txt}) {
    if (!(c > 0.5 && c <= 1.0)) fail_usage("cue strength must lie in (0.5, 1]");
  }
  const TokenLayout layout = TokenLayout::for_vocab(vocab_size);
  (void)layout;
}

CorpusSpec CorpusSpec::from_config(const KeyValues& kv) {
  kv.require_known({"n_train", "n_test", "img_len", "txt_len", "cue_img", "cue_txt",
                    "vocab_size", "seed", "label_rule"});
  if (kv.get("label_rule", "OR") != "OR") fail_data("label_rule must be OR");
  CorpusSpec s;
  s.n_train = static_cast<std::size_t>(kv.get_int("n_train", static_cast<long long>(s.n_train)));
  s.n_test = static_cast<std::size_t>(kv.get_int("n_test", static_cast<long long>(s.n_test)));
  s.img_len = static_cast<std::size_t>(kv.get_int("img_len", static_cast<long long>(s.img_len)));
  s.txt_len = static_cast<std::size_t>(kv.get_int("txt_len", static_cast<long long>(s.txt_len)));
  s.cue_img = kv.get_double("cue_img", s.cue_img);
  s.cue_txt = kv.get_double("cue_txt", s.cue_txt);
  s.vocab_size = static_cast<std::size_t>(
      kv.get_int("vocab_size", static_cast<long long>(s.vocab_size)));
  s.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(s.seed)));
  return s;
}

KeyValues CorpusSpec::to_config() const {
  KeyValues kv;
  kv.set("n_train", std::to_string(n_train));
  kv.set("n_test", std::to_string(n_test));
  kv.set("img_len", std::to_string(img_len));
  kv.set("txt_len", std::to_string(txt_len));
  kv.set("cue_img", format_double(cue_img));
  kv.set("cue_txt", format_double(cue_txt));
  kv.set("vocab_size", std::to_string(vocab_size));
  kv.set("seed", std::to_string(seed));
  kv.set("label_rule", "OR");
  return kv;
}

Corpus generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  const TokenLayout layout = TokenLayout::for_vocab(spec.vocab_size);
  Corpus c;
  c.train.reserve(spec.n_train);
  c.test.reserve(spec.n_test);
  for (std::uint64_t i = 0; i < spec.n_train; ++i) c.train.push_back(make_sample(spec, layout, i));
  for (std::uint64_t i = 0; i < spec.n_test; ++i) {
    c.test.push_back(make_sample(spec, layout, spec.n_train + i));
  }
  return c;
}

std::size_t budget_count(double fraction, std::size_t n) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    fail_usage("budget fraction must lie in [0, 1], got " + format_double(fraction));
  }
  if (fraction == 0.0 || n == 0) return 0;
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  return std::clamp<std::size_t>(k, 1, n);
}

std::vector<SyntheticSample> apply_budget(std::vector<SyntheticSample> train,
                                          const Budget& budget, std::uint64_t seed) {
  const std::size_t n_img = budget_count(budget.fraction_img, train.size());
  const std::size_t n_txt = budget_count(budget.fraction_txt, train.size());
  auto reveal_mask = [&](std::size_t count, std::uint64_t stream) {
    std::vector<std::size_t> idx(train.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(mix_seed(seed, stream));
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<bool> keep(train.size(), false);
    for (std::size_t i = 0; i < count; ++i) keep[idx[i]] = true;
    return keep;
  };
  const auto keep_img = reveal_mask(n_img, 0x1a);
  const auto keep_txt = reveal_mask(n_txt, 0x7e);
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (!keep_img[i]) train[i].y_img.reset();
    if (!keep_txt[i]) train[i].y_txt.reset();
  }
  return train;
}

std::string format_corpus(const std::vector<SyntheticSample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    nlohmann::ordered_json j;
    j["id"] = s.id;
    j["img"] = s.img_tokens;
    j["txt"] = s.txt_tokens;
    j["y"] = to_string(s.y);
    if (s.y_img) j["y_img"] = to_string(*s.y_img);
    if (s.y_txt) j["y_txt"] = to_string(*s.y_txt);
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<SyntheticSample> parse_corpus(const std::string& text,
                                          const std::string& source) {
  std::vector<SyntheticSample> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail_data(where + ": malformed record: " + e.what());
    }
    if (!j.is_object()) fail_data(where + ": record is not an object");
    for (const auto& [key, _] : j.items()) {
      if (key != "id" && key != "img" && key != "txt" && key != "y" &&
          key != "y_img" && key != "y_txt") {
        fail_data(where + ": unknown field '" + key + "'");
      }
    }
    for (const char* req : {"id", "img", "txt", "y"}) {
      if (!j.contains(req)) fail_data(where + ": missing field '" + req + "'");
    }
    SyntheticSample s;
    if (!j["id"].is_number_unsigned()) fail_data(where + ": id must be a non-negative integer");
    s.id = j["id"].get<std::uint64_t>();
    for (const auto& [key, dst] : {std::pair{"img", &s.img_tokens}, std::pair{"txt", &s.txt_tokens}}) {
      if (!j[key].is_array()) fail_data(where + ": '" + key + "' must be an array");
      for (const auto& v : j[key]) dst->push_back(parse_token(v, where));
    }
    auto label = [&](const char* key) {
      if (!j[key].is_string()) fail_data(where + ": '" + key + "' must be a string");
      try {
        return parse_label(j[key].get<std::string>());
      } catch (const Error& e) {
        fail_data(where + ": " + e.what());
      }
    };
    s.y = label("y");
    if (j.contains("y_img")) s.y_img = label("y_img");
    if (j.contains("y_txt")) s.y_txt = label("y_txt");
    out.push_back(std::move(s));
  }
  return out;
}

void write_corpus(const std::filesystem::path& path,
                  const std::vector<SyntheticSample>& samples) {
  write_file(path, format_corpus(samples));
}

std::vector<SyntheticSample> read_corpus(const std::filesystem::path& path) {
  return parse_corpus(read_file(path), path.string());
}

std::optional<Label> gold_label(const SyntheticSample& s, Setting setting) {
  switch (setting) {
    case Setting::kMulti: return s.y;
    case Setting::kImgOnly: return s.y_img;
    case Setting::kTextOnly: return s.y_txt;
  }
  return std::nullopt;
}

}  // namespace hmslab
