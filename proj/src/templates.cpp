// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "recalign/errors.hpp"
#include "recalign/instructions.hpp"

namespace recalign {

namespace {
constexpr const char* kBuiltinTemplates =
#include "templates_builtin.inc"
    ;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}
}  // namespace

TemplateSet TemplateSet::builtin() { return parse(kBuiltinTemplates); }

TemplateSet TemplateSet::parse(const std::string& text) {
  TemplateSet set;
  std::istringstream in(text);
  std::string line, current;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      current = line.substr(1, line.size() - 2);
      set.sections_[current];
      continue;
    }
    if (current.empty()) throw ParseError("templates", lineno, "template line outside of a section");
    set.sections_[current].push_back(line);
  }
  return set;
}

TemplateSet TemplateSet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open template file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const std::vector<std::string>& TemplateSet::section(const std::string& name) const {
  auto it = sections_.find(name);
  if (it == sections_.end() || it->second.empty()) throw TemplateError("template section '" + name + "' is missing");
  return it->second;
}

std::string substitute(const std::string& tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tmpl.size() + 64);
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i);
      if (close == std::string::npos) throw TemplateError("unterminated placeholder in template");
      const std::string name = tmpl.substr(i + 1, close - i - 1);
      auto it = values.find(name);
      if (it == values.end()) throw TemplateError("no value for placeholder {" + name + "}");
      out += it->second;
      i = close + 1;
    } else {
      out += tmpl[i++];
    }
  }
  return out;
}

std::string format_proportion(double m) {
  const double pct = std::round(m * 1000.0) / 10.0;
  char buf[32];
  if (std::abs(pct - std::round(pct)) < 1e-9)
    std::snprintf(buf, sizeof buf, "%d%%", static_cast<int>(std::round(pct)));
  else
    std::snprintf(buf, sizeof buf, "%.1f%%", pct);
  return buf;
}

}  // namespace recalign
