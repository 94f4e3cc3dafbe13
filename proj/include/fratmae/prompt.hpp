#ifndef FRATMAE_PROMPT_HPP
#define FRATMAE_PROMPT_HPP

#include <string>

#include "fratmae/errors.hpp"

namespace fratmae {

enum class Sex { M, F };

inline std::string to_string(Sex s) { return s == Sex::M ? "M" : "F"; }
inline Sex sex_from_string(const std::string& s) {
  if (s == "M") return Sex::M;
  if (s == "F") return Sex::F;
  throw ConfigError("invalid sex: " + s);
}

struct TextMetadata {
  std::string tracer;
  std::string diagnosis;
  int age = 0;
  Sex sex = Sex::M;

  bool valid() const { return age >= 0 && !tracer.empty() && !diagnosis.empty(); }
  bool operator==(const TextMetadata&) const = default;
};

// Fixed prompt template. The sentinel markers double as parse anchors, so
// multi-word tracer/diagnosis values round-trip.
inline std::string format_prompt(const TextMetadata& meta) {
  if (!meta.valid()) throw ConfigError("format_prompt: invalid metadata");
  return "<tracer> " + meta.tracer + " <diagnosis> " + meta.diagnosis + " <age> " +
         std::to_string(meta.age) + " <sex> " + to_string(meta.sex);
}

inline TextMetadata parse_prompt(const std::string& prompt) {
  const std::string kTracer = "<tracer> ";
  const std::string kDiag = " <diagnosis> ";
  const std::string kAge = " <age> ";
  const std::string kSex = " <sex> ";
  if (prompt.rfind(kTracer, 0) != 0) throw ConfigError("parse_prompt: missing <tracer>");
  const size_t d = prompt.find(kDiag);
  const size_t a = prompt.find(kAge, d == std::string::npos ? 0 : d);
  const size_t s = prompt.find(kSex, a == std::string::npos ? 0 : a);
  if (d == std::string::npos || a == std::string::npos || s == std::string::npos)
    throw ConfigError("parse_prompt: malformed prompt: " + prompt);
  TextMetadata meta;
  meta.tracer = prompt.substr(kTracer.size(), d - kTracer.size());
  meta.diagnosis = prompt.substr(d + kDiag.size(), a - d - kDiag.size());
  meta.age = std::stoi(prompt.substr(a + kAge.size(), s - a - kAge.size()));
  meta.sex = sex_from_string(prompt.substr(s + kSex.size()));
  if (!meta.valid()) throw ConfigError("parse_prompt: invalid field values");
  return meta;
}

}  // namespace fratmae

#endif
