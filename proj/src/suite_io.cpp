#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "viscog/error.hpp"
#include "viscog/scene.hpp"

namespace viscog {

namespace {

constexpr std::string_view kSuiteHeader = "viscoglab-suite v1";

using ojson = nlohmann::ordered_json;

ojson to_json(const PromptSpec& s) {
  ojson j;
  j["id"] = s.id;
  j["kind"] = to_string(s.kind);
  ojson objs = ojson::array();
  for (const auto& o : s.objects) {
    ojson oj;
    oj["class"] = o.cls;
    oj["color"] = o.color ? ojson(*o.color) : ojson(nullptr);
    oj["count"] = o.count;
    objs.push_back(oj);
  }
  j["objects"] = objs;
  ojson rels = ojson::array();
  for (const auto& r : s.relations) {
    ojson rj;
    rj["subject"] = r.subject;
    rj["object"] = r.object;
    rj["kind"] = to_string(r.kind);
    rels.push_back(rj);
  }
  j["relations"] = rels;
  ojson hints = ojson::array();
  for (auto h : s.hints) hints.push_back(to_string(h));
  j["hints"] = hints;
  j["text"] = s.text;
  j["alias"] = s.alias_id ? ojson(*s.alias_id) : ojson(nullptr);
  return j;
}

PromptSpec from_json(const ojson& j) {
  PromptSpec s;
  s.id = j.at("id").get<int>();
  s.kind = template_kind_from_string(j.at("kind").get<std::string>());
  for (const auto& oj : j.at("objects")) {
    RequiredObject o;
    o.cls = oj.at("class").get<int>();
    if (!oj.at("color").is_null()) o.color = oj.at("color").get<int>();
    o.count = oj.at("count").get<int>();
    if (o.cls < 0 || o.cls >= kNumClasses) throw DataError("class id out of range");
    if (o.color && (*o.color < 0 || *o.color >= kNumColors)) throw DataError("color id out of range");
    if (o.count < 1) throw DataError("object count must be positive");
    s.objects.push_back(o);
  }
  for (const auto& rj : j.at("relations")) {
    Relation r{rj.at("subject").get<int>(), rj.at("object").get<int>(),
               relation_from_string(rj.at("kind").get<std::string>())};
    const int n = static_cast<int>(s.objects.size());
    if (r.subject < 0 || r.subject >= n || r.object < 0 || r.object >= n || r.subject == r.object)
      throw DataError("relation indices invalid in spec " + std::to_string(s.id));
    s.relations.push_back(r);
  }
  for (const auto& h : j.at("hints")) s.hints.push_back(relation_from_string(h.get<std::string>()));
  s.text = j.at("text").get<std::vector<int>>();
  if (!j.at("alias").is_null()) s.alias_id = j.at("alias").get<int>();
  return s;
}

}  // namespace

std::string spec_to_line(const PromptSpec& spec) { return to_json(spec).dump(); }

PromptSpec spec_from_line(std::string_view line) {
  try {
    return from_json(ojson::parse(line));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed prompt record: ") + e.what());
  }
}

void write_suite(std::ostream& os, const std::vector<PromptSpec>& suite) {
  os << kSuiteHeader << '\n';
  for (const auto& s : suite) os << spec_to_line(s) << '\n';
}

std::vector<PromptSpec> read_suite(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kSuiteHeader)
    throw DataError("missing suite header '" + std::string(kSuiteHeader) + "'");
  std::vector<PromptSpec> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(spec_from_line(line));
  }
  return out;
}

void save_suite(const std::string& path, const std::vector<PromptSpec>& suite) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_suite(os, suite);
  if (!os) throw IoError("write failed for '" + path + "'");
}

std::vector<PromptSpec> load_suite(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  return read_suite(is);
}

}  // namespace viscog
