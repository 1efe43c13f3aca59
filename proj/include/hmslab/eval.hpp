#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hmslab/data.hpp"
#include "hmslab/model.hpp"
#include "hmslab/types.hpp"

namespace hmslab {

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct SettingReport {
  Setting setting = Setting::kMulti;
  // confusion[gold][pred], indexed by Label.
  std::array<std::array<std::size_t, 2>, 2> confusion{};
  std::array<ClassMetrics, 2> per_class{};
  double macro_f1 = 0.0;
  std::size_t samples = 0;
};

struct EvalReport {
  // Indexed by Setting; absent when no sample carried the needed gold label.
  std::array<std::optional<SettingReport>, 3> settings;
  std::array<std::size_t, 3> excluded{};

  const std::optional<SettingReport>& at(Setting s) const {
    return settings[static_cast<std::size_t>(s)];
  }
  // Macro F1 for `s`, or NaN when the setting is absent.
  double macro_f1(Setting s) const;
  std::string to_text() const;
};

// Precision/recall with 0/0 := 0, and per-class F1 = 2tp / (2tp + fp + fn)
// with 0/0 := 0. Throws kUsage on length mismatch or empty input.
SettingReport score_predictions(std::span<const Label> preds, std::span<const Label> golds);
double macro_f1(std::span<const Label> preds, std::span<const Label> golds);

// Runs `model` on every sample carrying the gold label each setting needs.
EvalReport evaluate(const Model& model, const std::vector<SyntheticSample>& test,
                    std::span<const Setting> settings);

// Predictions and golds for one setting; samples without the gold are skipped.
struct Predictions {
  std::vector<Label> preds;
  std::vector<Label> golds;
  std::size_t excluded = 0;
};
Predictions predict_setting(const Model& model, const std::vector<SyntheticSample>& test,
                            Setting setting);

}  // namespace hmslab
