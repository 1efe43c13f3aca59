#include "hmslab/types.hpp"

#include "hmslab/error.hpp"

namespace hmslab {

std::string to_string(Label l) { return l == Label::kReal ? "REAL" : "FAKE"; }

std::string to_string(Group g) {
  switch (g) {
    case Group::kIns: return "ins";
    case Group::kImg: return "img";
    case Group::kText: return "text";
  }
  return "?";
}

std::string to_string(Setting s) {
  switch (s) {
    case Setting::kMulti: return "MULTI";
    case Setting::kImgOnly: return "IMG_ONLY";
    case Setting::kTextOnly: return "TEXT_ONLY";
  }
  return "?";
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::kImg: return "IMG";
    case Stage::kText: return "TEXT";
    case Stage::kMulti: return "MULTI";
  }
  return "?";
}

Label parse_label(std::string_view s) {
  if (s == "REAL") return Label::kReal;
  if (s == "FAKE") return Label::kFake;
  fail_data("unknown label '" + std::string(s) + "'");
}

Setting parse_setting(std::string_view s) {
  if (s == "MULTI" || s == "multi") return Setting::kMulti;
  if (s == "IMG_ONLY" || s == "img") return Setting::kImgOnly;
  if (s == "TEXT_ONLY" || s == "text") return Setting::kTextOnly;
  fail_data("unknown setting '" + std::string(s) + "'");
}

Stage parse_stage(std::string_view s) {
  if (s == "IMG") return Stage::kImg;
  if (s == "TEXT") return Stage::kText;
  if (s == "MULTI") return Stage::kMulti;
  fail_data("unknown stage '" + std::string(s) + "'");
}

}  // namespace hmslab
