#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <numeric>

#include <json.hpp>

#include "nmpg/error.hpp"
#include "nmpg/harness.hpp"
#include "nmpg/rng.hpp"

namespace nmpg {
namespace {

constexpr std::string_view kCheckpointMagic = "NMPG-CKPT 1";

std::string fmt(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string to_hex(const std::vector<std::uint8_t>& bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xf]);
  }
  return out;
}

std::vector<std::uint8_t> from_hex(std::string_view hex) {
  require(hex.size() % 2 == 0, ErrorKind::Io, "checkpoint: odd-length hex field");
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    fail(ErrorKind::Io, "checkpoint: bad hex digit");
  };
  std::vector<std::uint8_t> out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
  }
  return out;
}

void put_le(std::string& out, double v) {
  auto u = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

double get_le(const char* p) {
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<double>(u);
}

template <class T>
T header_number(std::string_view key, std::string_view value) {
  T out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  require(ec == std::errc{} && ptr == value.data() + value.size(), ErrorKind::Io,
          "checkpoint: bad value for '" + std::string(key) + "'");
  return out;
}

}  // namespace

std::string encode_checkpoint(const TrainerState& s) {
  std::string out;
  out += kCheckpointMagic;
  out += "\npattern " + s.logits.pattern().to_string();
  out += "\ndim " + std::to_string(s.logits.dim());
  out += "\nstep " + std::to_string(s.step);
  out += "\nlearning_rate " + fmt(s.learning_rate);
  out += "\nalpha " + fmt(s.tracker.alpha);
  out += "\ndelta " + fmt(s.tracker.delta);
  out += "\nseed " + std::to_string(s.rng_seed);
  out += "\nbaseline " + to_hex(pack_bits(s.baseline_mask));
  out += "\nend\n";
  for (double v : s.logits.values()) put_le(out, v);
  return out;
}

TrainerState decode_checkpoint(std::string_view bytes) {
  require(bytes.substr(0, kCheckpointMagic.size()) == kCheckpointMagic, ErrorKind::Io,
          "checkpoint: missing magic line");
  std::optional<SparsityPattern> pattern;
  std::size_t dim = 0;
  std::uint64_t step = 0, seed = 0;
  double eta = 0.0, alpha = 0.0, delta = 0.0;
  std::string baseline_hex;

  std::size_t pos = bytes.find('\n');
  require(pos != std::string_view::npos, ErrorKind::Io, "checkpoint: truncated header");
  ++pos;
  while (true) {
    const auto nl = bytes.find('\n', pos);
    require(nl != std::string_view::npos, ErrorKind::Io, "checkpoint: truncated header");
    const auto line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    if (line == "end") break;
    const auto sp = line.find(' ');
    require(sp != std::string_view::npos, ErrorKind::Io, "checkpoint: malformed header line");
    const auto key = line.substr(0, sp);
    const auto value = line.substr(sp + 1);
    if (key == "pattern") pattern = SparsityPattern::parse(value);
    else if (key == "dim") dim = header_number<std::size_t>(key, value);
    else if (key == "step") step = header_number<std::uint64_t>(key, value);
    else if (key == "learning_rate") eta = header_number<double>(key, value);
    else if (key == "alpha") alpha = header_number<double>(key, value);
    else if (key == "delta") delta = header_number<double>(key, value);
    else if (key == "seed") seed = header_number<std::uint64_t>(key, value);
    else if (key == "baseline") baseline_hex = std::string(value);
    else fail(ErrorKind::Io, "checkpoint: unknown header key '" + std::string(key) + "'");
  }
  require(pattern.has_value() && dim > 0, ErrorKind::Io, "checkpoint: missing pattern or dim");
  require(bytes.size() - pos == dim * 8, ErrorKind::Io,
          "checkpoint: expected " + std::to_string(dim * 8) + " logit bytes, found " +
              std::to_string(bytes.size() - pos));
  std::vector<double> logits(dim);
  for (std::size_t k = 0; k < dim; ++k) logits[k] = get_le(bytes.data() + pos + 8 * k);

  NMMask baseline = unpack_bits(*pattern, dim, from_hex(baseline_hex));
  return TrainerState{GroupLogits(*pattern, std::move(logits)), SmoothingTracker{delta, alpha},
                      std::move(baseline), step, eta, seed};
}

std::string step_record_line(const StepRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["minibatch_id"] = r.minibatch_id;
  j["loss"] = r.loss;
  j["baseline_loss"] = r.baseline_loss;
  j["residual"] = r.residual;
  j["delta"] = r.delta;
  return j.dump();
}

MemoryReport memory_report(SparsityPattern pattern, std::uint64_t d) {
  require(d > 0 && d % static_cast<std::uint64_t>(pattern.group_size) == 0,
          ErrorKind::InvalidArgument,
          "memory report: d=" + std::to_string(d) + " is not a positive multiple of M=" +
              std::to_string(pattern.group_size));
  const auto m = static_cast<std::uint64_t>(pattern.group_size);
  const std::uint64_t masks = binomial(pattern.group_size, pattern.n_keep);
  MemoryReport r;
  r.pattern = pattern;
  r.dim = d;
  r.per_position_logits = d;
  r.per_pattern_logits = masks * (d / m);
  const std::uint64_t g = std::gcd(masks, m);
  r.ratio_numerator = masks / g;
  r.ratio_denominator = m / g;
  return r;
}

std::string memory_report_line(const MemoryReport& r) {
  nlohmann::ordered_json j;
  j["pattern"] = r.pattern.to_string();
  j["dim"] = r.dim;
  j["per_position_logits"] = r.per_position_logits;
  j["per_pattern_logits"] = r.per_pattern_logits;
  j["ratio"] = std::to_string(r.ratio_numerator) + "/" + std::to_string(r.ratio_denominator);
  j["ratio_value"] = r.ratio();
  return j.dump();
}

ExitStatus exit_status_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Numeric: return ExitStatus::Numeric;
    case ErrorKind::Io: return ExitStatus::Io;
    case ErrorKind::InvalidArgument:
    case ErrorKind::Dimension:
    case ErrorKind::Capacity:
    case ErrorKind::Config: return ExitStatus::Config;
  }
  return ExitStatus::Config;
}

long double reference_group_log_prob(std::span<const std::uint8_t> mask,
                                     std::span<const long double> logits) {
  const long double top = *std::max_element(logits.begin(), logits.end());
  std::vector<long double> psi(logits.size());
  long double z = 0.0L;
  for (std::size_t k = 0; k < logits.size(); ++k) z += psi[k] = std::exp(logits[k] - top);
  for (auto& x : psi) x /= z;

  std::vector<std::size_t> kept;
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (mask[k]) kept.push_back(k);
  }
  long double total = 0.0L;
  do {
    long double term = 1.0L, drawn = 0.0L;
    for (std::size_t k : kept) {
      const long double rest = 1.0L - drawn;
      term *= rest > 0.0L ? psi[k] / rest : 1.0L;  // 0/0 := 1
      drawn += psi[k];
    }
    total += term;
  } while (std::next_permutation(kept.begin(), kept.end()));
  return std::log(std::max(total, 1e-300L));
}

std::vector<double> finite_difference_score(const NMMask& mask, const GroupLogits& logits,
                                            double step) {
  const auto m = static_cast<std::size_t>(logits.pattern().group_size);
  const auto h = static_cast<long double>(step);
  std::vector<double> out(logits.dim());
  for (std::size_t i = 0; i < logits.group_count(); ++i) {
    const auto group = logits.group(i);
    const auto bits = mask.group(i);
    std::vector<long double> v(group.begin(), group.end());
    for (std::size_t k = 0; k < m; ++k) {
      const long double saved = v[k];
      v[k] = saved + h;
      const long double up = reference_group_log_prob(bits, v);
      v[k] = saved - h;
      const long double down = reference_group_log_prob(bits, v);
      v[k] = saved;
      out[i * m + k] = static_cast<double>((up - down) / (2.0L * h));
    }
  }
  return out;
}

RunConfig oracle_config(std::string_view id) {
  RunConfig c;
  c.task = TaskKind::PlantedLinear;
  c.dim = 8;
  c.pattern = SparsityPattern::make(2, 4);
  c.samples = 16;
  c.data.batch_size = 4;
  c.init_mask = InitMaskSource::Magnitude;
  c.seed = 7;
  if (id == "unbiased-d8-v1") {
    c.noise = 0.1;
    c.task_seed = 1001;
  } else if (id == "confined-d8-v1") {
    c.samples = 32;
    c.noise = 0.05;
    c.data.confine_loss = true;
    c.data.batch_offset_spread = 0.5;
    c.task_seed = 1002;
  } else {
    fail(ErrorKind::InvalidArgument, "unknown oracle instance '" + std::string(id) + "'");
  }
  return c;
}

std::vector<LogitsCase> oracle_logits_cases(const RunConfig& c, const NMMask& m0) {
  std::vector<LogitsCase> out;
  out.push_back({"zeros", GroupLogits(c.pattern, std::vector<double>(c.dim, 0.0))});
  out.push_back({"m0x1.5", init_logits(m0, 1.5)});
  auto rng = RandomStream::derive(c.effective_task_seed(), stream_tag::kVerify, 0xC0FFEE);
  std::vector<double> v(c.dim);
  for (double& x : v) x = rng.normal();
  out.push_back({"normal", GroupLogits(c.pattern, std::move(v))});
  return out;
}

}  // namespace nmpg
