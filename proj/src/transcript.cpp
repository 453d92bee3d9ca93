#include "gradechat/transcript.hpp"

#include <sstream>

#include "gradechat/errors.hpp"

namespace gradechat {

std::string to_string(MethodKind m) {
  switch (m) {
    case MethodKind::baseline: return "baseline";
    case MethodKind::detailed: return "detailed";
    case MethodKind::overgenerate: return "overgenerate";
    case MethodKind::fudge: return "fudge";
  }
  return "baseline";
}

std::optional<MethodKind> method_from_string(std::string_view s) {
  if (s == "baseline") return MethodKind::baseline;
  if (s == "detailed") return MethodKind::detailed;
  if (s == "overgenerate") return MethodKind::overgenerate;
  if (s == "fudge") return MethodKind::fudge;
  return std::nullopt;
}

std::string MethodSpec::label() const {
  if (kind != MethodKind::fudge) return to_string(kind);
  std::ostringstream os;
  os << "fudge(lambda=" << lambda << ")";
  return os.str();
}

MethodSpec MethodSpec::parse(std::string_view s) {
  const auto colon = s.find(':');
  const std::string_view name = s.substr(0, colon);
  const auto kind = method_from_string(name);
  if (!kind) {
    throw ValidationError("unknown method '" + std::string(s) + "' (valid: " + kValidMethods + ")");
  }
  MethodSpec spec{*kind, 0.8};
  if (colon != std::string_view::npos) {
    if (*kind != MethodKind::fudge) throw ValidationError("only fudge takes a parameter: '" + std::string(s) + "'");
    const std::string arg(s.substr(colon + 1));
    std::size_t used = 0;
    try {
      spec.lambda = std::stod(arg, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != arg.size() || arg.empty()) throw ValidationError("bad lambda in '" + std::string(s) + "'");
  }
  if (!(spec.lambda >= 0.0 && spec.lambda <= 1.0)) throw ValidationError("lambda must be in [0, 1]");
  return spec;
}

std::vector<const TurnMetrics*> DialogueTranscript::tutor_metrics() const {
  std::vector<const TurnMetrics*> out;
  for (const auto& t : turns) {
    if (t.role == Role::tutor && t.metrics) out.push_back(&*t.metrics);
  }
  return out;
}

}  // namespace gradechat
