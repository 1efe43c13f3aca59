#include "hmslab/eval.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "hmslab/error.hpp"
#include "hmslab/util.hpp"

namespace hmslab {

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

SettingReport score_predictions(std::span<const Label> preds, std::span<const Label> golds) {
  if (preds.size() != golds.size()) {
    fail_usage("macro_f1: " + std::to_string(preds.size()) + " predictions vs " +
               std::to_string(golds.size()) + " gold labels");
  }
  if (preds.empty()) fail_usage("macro_f1: no samples");
  SettingReport r;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    ++r.confusion[static_cast<std::size_t>(golds[i])][static_cast<std::size_t>(preds[i])];
  }
  r.samples = preds.size();
  for (std::size_t c = 0; c < 2; ++c) {
    const std::size_t tp = r.confusion[c][c];
    const std::size_t fp = r.confusion[1 - c][c];
    const std::size_t fn = r.confusion[c][1 - c];
    r.per_class[c].precision = ratio(tp, tp + fp);
    r.per_class[c].recall = ratio(tp, tp + fn);
    r.per_class[c].f1 = ratio(2 * tp, 2 * tp + fp + fn);
  }
  r.macro_f1 = 0.5 * (r.per_class[0].f1 + r.per_class[1].f1);
  return r;
}

double macro_f1(std::span<const Label> preds, std::span<const Label> golds) {
  return score_predictions(preds, golds).macro_f1;
}

Predictions predict_setting(const Model& model, const std::vector<SyntheticSample>& test,
                            Setting setting) {
  Predictions p;
  for (const SyntheticSample& s : test) {
    const auto gold = gold_label(s, setting);
    if (!gold) {
      ++p.excluded;
      continue;
    }
    p.preds.push_back(predict_label(model.trace(build_sequence(s, setting))));
    p.golds.push_back(*gold);
  }
  return p;
}

EvalReport evaluate(const Model& model, const std::vector<SyntheticSample>& test,
                    std::span<const Setting> settings) {
  EvalReport report;
  for (Setting setting : settings) {
    const auto idx = static_cast<std::size_t>(setting);
    Predictions p = predict_setting(model, test, setting);
    report.excluded[idx] = p.excluded;
    if (p.preds.empty()) continue;
    SettingReport r = score_predictions(p.preds, p.golds);
    r.setting = setting;
    report.settings[idx] = r;
  }
  return report;
}

double EvalReport::macro_f1(Setting s) const {
  const auto& r = at(s);
  return r ? r->macro_f1 : std::numeric_limits<double>::quiet_NaN();
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  for (Setting s : kAllSettings) {
    const auto idx = static_cast<std::size_t>(s);
    const std::string p = to_string(s);
    if (!settings[idx]) {
      os << p << ".status=absent\n" << p << ".excluded=" << excluded[idx] << "\n";
      continue;
    }
    const SettingReport& r = *settings[idx];
    os << p << ".status=present\n";
    os << p << ".samples=" << r.samples << "\n";
    os << p << ".excluded=" << excluded[idx] << "\n";
    os << p << ".macro_f1=" << format_double(r.macro_f1) << "\n";
    for (Label c : {Label::kReal, Label::kFake}) {
      const auto ci = static_cast<std::size_t>(c);
      const std::string cp = p + "." + to_string(c);
      os << cp << ".precision=" << format_double(r.per_class[ci].precision) << "\n";
      os << cp << ".recall=" << format_double(r.per_class[ci].recall) << "\n";
      os << cp << ".f1=" << format_double(r.per_class[ci].f1) << "\n";
    }
    for (Label g : {Label::kReal, Label::kFake}) {
      for (Label pr : {Label::kReal, Label::kFake}) {
        os << p << ".confusion." << to_string(g) << "_as_" << to_string(pr) << "="
           << r.confusion[static_cast<std::size_t>(g)][static_cast<std::size_t>(pr)] << "\n";
      }
    }
  }
  return os.str();
}

}  // namespace hmslab
