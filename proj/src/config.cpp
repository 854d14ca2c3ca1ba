#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "nmpg/error.hpp"
#include "nmpg/harness.hpp"

namespace nmpg {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view why) {
  fail(ErrorKind::Config, "config field '" + std::string(key) + "': " + std::string(why) +
                              " (got '" + std::string(value) + "')");
}

std::uint64_t parse_u64(std::string_view key, std::string_view value) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    bad_value(key, value, "expected a non-negative integer");
  }
  return out;
}

double parse_double(std::string_view key, std::string_view value) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size() || !std::isfinite(out)) {
    bad_value(key, value, "expected a finite number");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true") return true;
  if (value == "false") return false;
  bad_value(key, value, "expected true or false");
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

void set_config_value(RunConfig& config, std::string_view key, std::string_view value) {
  // Applied to a copy so a rejected value leaves `config` unchanged.
  RunConfig c = config;
  try {
    if (key == "version") {
      if (parse_u64(key, value) != static_cast<std::uint64_t>(kConfigVersion)) {
        bad_value(key, value, "unsupported config version");
      }
    } else if (key == "task") {
      if (value == "planted_linear") c.task = TaskKind::PlantedLinear;
      else if (value == "mlp") c.task = TaskKind::Mlp;
      else bad_value(key, value, "expected planted_linear or mlp");
    } else if (key == "dim") {
      c.dim = parse_u64(key, value);
    } else if (key == "pattern") {
      c.pattern = SparsityPattern::parse(value);
    } else if (key == "samples") {
      c.samples = parse_u64(key, value);
    } else if (key == "sequence_length") {
      c.data.sequence_length = parse_u64(key, value);
    } else if (key == "batch_size") {
      c.data.batch_size = parse_u64(key, value);
    } else if (key == "hidden_width") {
      c.hidden_width = parse_u64(key, value);
    } else if (key == "noise") {
      c.noise = parse_double(key, value);
      if (c.noise < 0) bad_value(key, value, "must be >= 0");
    } else if (key == "loss") {
      c.data.loss = loss_kind_from_string(value);
    } else if (key == "batch_offset_spread") {
      c.data.batch_offset_spread = parse_double(key, value);
      if (c.data.batch_offset_spread < 0) bad_value(key, value, "must be >= 0");
    } else if (key == "confine_loss") {
      c.data.confine_loss = parse_bool(key, value);
    } else if (key == "calibration_batches") {
      c.data.calibration_batches = parse_u64(key, value);
    } else if (key == "task_seed") {
      c.task_seed = parse_u64(key, value);
    } else if (key == "estimator") {
      c.estimator = estimator_from_string(value);
    } else if (key == "learning_rate") {
      c.learning_rate = parse_double(key, value);
      if (c.learning_rate < 0) bad_value(key, value, "must be >= 0");
    } else if (key == "alpha") {
      c.alpha = parse_double(key, value);
      if (c.alpha < 0.0 || c.alpha >= 1.0) bad_value(key, value, "must lie in [0, 1)");
    } else if (key == "logits_magnitude") {
      c.logits_magnitude = parse_double(key, value);
    } else if (key == "init_mask") {
      if (value == "magnitude") c.init_mask = InitMaskSource::Magnitude;
      else if (value == "random") c.init_mask = InitMaskSource::Random;
      else if (value == "planted") c.init_mask = InitMaskSource::Planted;
      else if (value == "file") c.init_mask = InitMaskSource::File;
      else bad_value(key, value, "expected magnitude, random, planted or file");
    } else if (key == "init_mask_file") {
      c.init_mask_file = std::string(value);
    } else if (key == "seed") {
      c.seed = parse_u64(key, value);
    } else if (key == "iterations") {
      c.iterations = parse_u64(key, value);
    } else if (key == "refresh_fraction") {
      if (value == "off") {
        c.refresh_fraction.reset();
      } else {
        const double f = parse_double(key, value);
        if (f <= 0.0) bad_value(key, value, "must be positive or 'off'");
        c.refresh_fraction = f;
      }
    } else if (key == "output_dir") {
      c.output_dir = std::string(value);
    } else if (key == "variance_samples") {
      c.variance_samples = parse_u64(key, value);
    } else if (key == "tracker_steps") {
      c.tracker_steps = parse_u64(key, value);
    } else if (key == "curve_window") {
      c.curve_window = parse_u64(key, value);
      if (c.curve_window == 0) bad_value(key, value, "must be positive");
    } else if (key == "sweep_samples") {
      c.sweep_samples = parse_u64(key, value);
    } else {
      fail(ErrorKind::Config, "unknown config key '" + std::string(key) + "'");
    }
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Config) throw;
    fail(ErrorKind::Config, "config field '" + std::string(key) + "': " + e.what());
  }
  config = std::move(c);
}

RunConfig parse_config(std::string_view text) {
  RunConfig c;
  bool saw_version = false;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      fail(ErrorKind::Config, "config line " + std::to_string(line_no) +
                                  ": expected 'key = value', got '" + std::string(line) + "'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (!seen.insert(std::string(key)).second) {
      fail(ErrorKind::Config, "config key '" + std::string(key) + "' appears twice");
    }
    set_config_value(c, key, value);
    if (key == "version") saw_version = true;
  }
  require(saw_version, ErrorKind::Config, "config is missing the 'version' key");
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

void validate_config(const RunConfig& c) {
  auto check = [](bool ok, const std::string& msg) { require(ok, ErrorKind::Config, msg); };
  check(c.dim > 0 && c.dim % static_cast<std::size_t>(c.pattern.group_size) == 0,
        "config field 'dim': must be a positive multiple of M=" +
            std::to_string(c.pattern.group_size));
  check(c.samples >= 1, "config field 'samples': must be >= 1");
  check(c.data.batch_size >= 1, "config field 'batch_size': must be >= 1");
  check(c.data.sequence_length >= 1, "config field 'sequence_length': must be >= 1");
  check(c.learning_rate > 0.0 || c.iterations == 0,
        "config field 'learning_rate': must be > 0 unless iterations = 0");
  check(c.alpha >= 0.0 && c.alpha < 1.0, "config field 'alpha': must lie in [0, 1)");
  if (c.task == TaskKind::Mlp) {
    check(c.hidden_width > 0, "config field 'hidden_width': must be positive");
    check(c.dim % c.hidden_width == 0,
          "config field 'hidden_width': must divide dim");
  }
  if (c.init_mask == InitMaskSource::File) {
    check(!c.init_mask_file.empty(), "config field 'init_mask_file': required when init_mask = file");
    check(std::filesystem::exists(c.init_mask_file),
          "config field 'init_mask_file': file '" + c.init_mask_file + "' does not exist");
  }
  if (c.init_mask == InitMaskSource::Planted) {
    check(c.task == TaskKind::PlantedLinear,
          "config field 'init_mask': planted requires task = planted_linear");
  }
}

std::string to_text(const RunConfig& c) {
  std::ostringstream out;
  out << "version = " << kConfigVersion << "\n";
  out << "task = " << (c.task == TaskKind::PlantedLinear ? "planted_linear" : "mlp") << "\n";
  out << "dim = " << c.dim << "\n";
  out << "pattern = " << c.pattern.to_string() << "\n";
  out << "samples = " << c.samples << "\n";
  out << "sequence_length = " << c.data.sequence_length << "\n";
  out << "batch_size = " << c.data.batch_size << "\n";
  out << "hidden_width = " << c.hidden_width << "\n";
  out << "noise = " << format_double(c.noise) << "\n";
  out << "loss = " << to_string(c.data.loss) << "\n";
  out << "batch_offset_spread = " << format_double(c.data.batch_offset_spread) << "\n";
  out << "confine_loss = " << (c.data.confine_loss ? "true" : "false") << "\n";
  out << "calibration_batches = " << c.data.calibration_batches << "\n";
  if (c.task_seed) out << "task_seed = " << *c.task_seed << "\n";
  out << "estimator = " << to_string(c.estimator) << "\n";
  out << "learning_rate = " << format_double(c.learning_rate) << "\n";
  out << "alpha = " << format_double(c.alpha) << "\n";
  out << "logits_magnitude = " << format_double(c.logits_magnitude) << "\n";
  static constexpr const char* kSources[] = {"magnitude", "random", "planted", "file"};
  out << "init_mask = " << kSources[static_cast<int>(c.init_mask)] << "\n";
  if (!c.init_mask_file.empty()) out << "init_mask_file = " << c.init_mask_file << "\n";
  out << "seed = " << c.seed << "\n";
  out << "iterations = " << c.iterations << "\n";
  out << "refresh_fraction = "
      << (c.refresh_fraction ? format_double(*c.refresh_fraction) : std::string("off")) << "\n";
  out << "output_dir = " << c.output_dir << "\n";
  out << "variance_samples = " << c.variance_samples << "\n";
  out << "tracker_steps = " << c.tracker_steps << "\n";
  out << "curve_window = " << c.curve_window << "\n";
  out << "sweep_samples = " << c.sweep_samples << "\n";
  return out.str();
}

BuiltTask build_task(const RunConfig& c) {
  validate_config(c);
  const std::uint64_t seed = c.effective_task_seed();
  if (c.task == TaskKind::PlantedLinear) {
    auto inst = make_planted_linear(c.dim, c.pattern, c.samples, c.noise, seed, c.data);
    return BuiltTask{std::move(inst.task), std::move(inst.planted_mask)};
  }
  return BuiltTask{make_mlp_task(c.dim, c.pattern, c.hidden_width, c.samples, seed, c.data, c.noise),
                   std::nullopt};
}

NMMask initial_mask(const RunConfig& c, const BuiltTask& built) {
  switch (c.init_mask) {
    case InitMaskSource::Magnitude:
      return magnitude_mask(built.task.weights(), c.pattern);
    case InitMaskSource::Random:
      return random_mask(c.pattern, c.dim, c.seed);
    case InitMaskSource::Planted:
      require(built.planted.has_value(), ErrorKind::Config, "task has no planted mask");
      return *built.planted;
    case InitMaskSource::File: {
      std::ifstream in(c.init_mask_file, std::ios::binary);
      require(static_cast<bool>(in), ErrorKind::Io, "cannot open mask file " + c.init_mask_file);
      std::ostringstream buf;
      buf << in.rdbuf();
      const std::string bytes = buf.str();
      NMMask m = bytes.rfind("NMB", 0) == 0 ? mask_from_packed_file(bytes) : mask_from_text(bytes);
      require(m.pattern() == c.pattern && m.dim() == c.dim, ErrorKind::Config,
              "config field 'init_mask_file': mask shape does not match pattern/dim");
      return m;
    }
  }
  fail(ErrorKind::Config, "unknown init mask source");
}

}  // namespace nmpg
