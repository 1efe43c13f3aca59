#pragma once

#include <array>
#include <string>
#include <string_view>

namespace hmslab {

enum class Label { kReal = 0, kFake = 1 };
enum class Group { kIns = 0, kImg = 1, kText = 2 };
// Inference input configuration.
enum class Setting { kMulti = 0, kImgOnly = 1, kTextOnly = 2 };
// Training stage; each stage trains on the matching Setting.
enum class Stage { kImg = 0, kText = 1, kMulti = 2 };

inline constexpr std::array<Setting, 3> kAllSettings = {
    Setting::kMulti, Setting::kImgOnly, Setting::kTextOnly};
inline constexpr std::array<Stage, 3> kStageOrder = {Stage::kImg, Stage::kText,
                                                     Stage::kMulti};

std::string to_string(Label l);
std::string to_string(Group g);
std::string to_string(Setting s);
std::string to_string(Stage s);

// Throw kData on unknown names.
Label parse_label(std::string_view s);
Setting parse_setting(std::string_view s);
Stage parse_stage(std::string_view s);

inline Setting setting_for(Stage s) {
  switch (s) {
    case Stage::kImg: return Setting::kImgOnly;
    case Stage::kText: return Setting::kTextOnly;
    case Stage::kMulti: return Setting::kMulti;
  }
  return Setting::kMulti;
}

inline Label or_label(Label a, Label b) {
  return (a == Label::kFake || b == Label::kFake) ? Label::kFake : Label::kReal;
}

}  // namespace hmslab
