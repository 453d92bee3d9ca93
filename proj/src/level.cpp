#include "gradechat/level.hpp"

#include <cctype>

#include "gradechat/errors.hpp"

namespace gradechat {

Level Level::from_value(int value) {
  if (value < 1 || value > kCount) {
    throw ValidationError("level value out of range 1..5: " + std::to_string(value));
  }
  return Level(value);
}

Level Level::from_label(std::string_view label) {
  if (auto l = parse(label)) return *l;
  throw ValidationError("unknown level '" + std::string(label) + "' (expected N5..N1)");
}

std::optional<Level> Level::parse(std::string_view s) {
  if (s.size() == 2 && (s[0] == 'N' || s[0] == 'n') && s[1] >= '1' && s[1] <= '5') {
    return Level(6 - (s[1] - '0'));
  }
  if (s.size() == 1 && s[0] >= '1' && s[0] <= '5') return Level(s[0] - '0');
  return std::nullopt;
}

std::array<Level, Level::kCount> Level::all() {
  return {Level(1), Level(2), Level(3), Level(4), Level(5)};
}

std::string Level::label() const { return std::string(kLevelLabels[static_cast<std::size_t>(index())]); }

}  // namespace gradechat
