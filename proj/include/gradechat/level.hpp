#pragma once

#include <array>
#include <compare>
#include <optional>
#include <string>
#include <string_view>

namespace gradechat {

// JLPT proficiency level. Scalar 1 is N5 (easiest), 5 is N1 (hardest).
class Level {
 public:
  static constexpr int kCount = 5;

  constexpr Level() = default;

  // Throws ValidationError outside 1..5.
  static Level from_value(int value);
  // Accepts "N5".."N1" (case-insensitive).
  static Level from_label(std::string_view label);
  static std::optional<Level> parse(std::string_view label_or_value);

  // N5 → N1, the scan order used everywhere levels are enumerated.
  static std::array<Level, kCount> all();

  constexpr int value() const { return value_; }
  constexpr int index() const { return value_ - 1; }
  std::string label() const;

  constexpr auto operator<=>(const Level&) const = default;

 private:
  constexpr explicit Level(int v) : value_(v) {}
  int value_ = 1;
};

inline constexpr std::array<std::string_view, Level::kCount> kLevelLabels = {"N5", "N4", "N3", "N2",
                                                                            "N1"};

}  // namespace gradechat
