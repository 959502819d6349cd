#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "viscog/policy.hpp"

namespace viscog {

namespace {

constexpr const char* kCkptHeader = "viscoglab-ckpt v1";

void write_doubles(std::ostream& os, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v(i));
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    char buf[8];
    std::memcpy(buf, &bits, 8);
    os.write(buf, 8);
  }
}

Eigen::VectorXd read_doubles(std::istream& is, Eigen::Index n) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    char buf[8];
    if (!is.read(buf, 8)) throw DataError("checkpoint truncated");
    std::uint64_t bits;
    std::memcpy(&bits, buf, 8);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    v(i) = std::bit_cast<double>(bits);
  }
  return v;
}

// "key=value" tokens of a section line
long long field(std::istringstream& line, const std::string& key) {
  std::string tok;
  if (!(line >> tok) || tok.rfind(key + "=", 0) != 0)
    throw DataError("checkpoint: expected field '" + key + "'");
  try {
    return std::stoll(tok.substr(key.size() + 1));
  } catch (const std::exception&) {
    throw DataError("checkpoint: malformed value for '" + key + "'");
  }
}

unsigned long long ufield(std::istringstream& line, const std::string& key) {
  std::string tok;
  if (!(line >> tok) || tok.rfind(key + "=", 0) != 0)
    throw DataError("checkpoint: expected field '" + key + "'");
  try {
    return std::stoull(tok.substr(key.size() + 1));
  } catch (const std::exception&) {
    throw DataError("checkpoint: malformed value for '" + key + "'");
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  const PolicyHyper& hp = ckpt.policy.hyper();
  os << kCkptHeader << '\n';
  os << "policy n_words=" << hp.n_words << " width=" << hp.width << " height=" << hp.height
     << " d_embed=" << hp.d_embed << " d_hidden=" << hp.d_hidden
     << " count=" << ckpt.policy.theta().size() << '\n';
  write_doubles(os, ckpt.policy.theta());
  if (ckpt.reasoner) {
    os << "reasoner count=" << ckpt.reasoner->size() << '\n';
    write_doubles(os, *ckpt.reasoner);
  }
  if (ckpt.teacher_provenance)
    os << "teacher seed=" << ckpt.teacher_provenance->first
       << " steps=" << ckpt.teacher_provenance->second << '\n';
  os << "state step=" << ckpt.step << '\n';
  os << "end\n";
  if (!os) throw IoError("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path, const std::optional<PolicyHyper>& expect) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(is, line) || line != kCkptHeader)
    throw DataError("'" + path + "' is not a viscoglab checkpoint");

  std::optional<Checkpoint> ckpt;
  std::optional<Eigen::VectorXd> reasoner;
  std::optional<std::pair<std::uint64_t, int>> teacher;
  int step = 0;
  bool ended = false;
  while (!ended && std::getline(is, line)) {
    std::istringstream ls(line);
    std::string section;
    ls >> section;
    if (section == "policy") {
      PolicyHyper hp;
      hp.n_words = static_cast<int>(field(ls, "n_words"));
      hp.width = static_cast<int>(field(ls, "width"));
      hp.height = static_cast<int>(field(ls, "height"));
      hp.d_embed = static_cast<int>(field(ls, "d_embed"));
      hp.d_hidden = static_cast<int>(field(ls, "d_hidden"));
      const auto count = field(ls, "count");
      if (expect && !(*expect == hp))
        throw ConfigError("checkpoint architecture (d_embed=" + std::to_string(hp.d_embed) +
                          ", d_hidden=" + std::to_string(hp.d_hidden) + ", " +
                          std::to_string(hp.width) + "x" + std::to_string(hp.height) +
                          ") differs from the configured model");
      if (hp.n_words <= 0 || hp.width <= 0 || hp.height <= 0 || hp.d_embed <= 0 || hp.d_hidden <= 0 ||
          count != PolicyParams::size_for(hp))
        throw DataError("checkpoint policy section is inconsistent");
      PolicyParams p(hp);
      p.theta() = read_doubles(is, count);
      ckpt = Checkpoint{std::move(p), std::nullopt, std::nullopt, 0};
    } else if (section == "reasoner") {
      const auto count = field(ls, "count");
      if (count < 0 || count > 4096) throw DataError("checkpoint reasoner section is inconsistent");
      reasoner = read_doubles(is, count);
    } else if (section == "teacher") {
      const auto seed = ufield(ls, "seed");
      const auto steps = field(ls, "steps");
      teacher = std::make_pair(static_cast<std::uint64_t>(seed), static_cast<int>(steps));
    } else if (section == "state") {
      step = static_cast<int>(field(ls, "step"));
    } else if (section == "end") {
      ended = true;
    } else {
      throw DataError("checkpoint: unknown section '" + section + "'");
    }
  }
  if (!ckpt || !ended) throw DataError("checkpoint '" + path + "' is incomplete");
  ckpt->reasoner = std::move(reasoner);
  ckpt->teacher_provenance = teacher;
  ckpt->step = step;
  if (!ckpt->policy.all_finite()) throw NumericError("checkpoint contains non-finite parameters");
  return std::move(*ckpt);
}

}  // namespace viscog
