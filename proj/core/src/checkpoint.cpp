#include "side/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "side/errors.hpp"

namespace side {
namespace {

constexpr const char* kMagicLine = "SIDECKPT 1";

std::string next_line(std::istream& in, const char* what) {
  std::string line;
  if (!std::getline(in, line)) {
    throw DataError(std::string("checkpoint: truncated header, expected ") + what);
  }
  return line;
}

std::uint64_t parse_count(const std::string& line, const std::string& keyword) {
  if (line.rfind(keyword + " ", 0) != 0) {
    throw DataError("checkpoint: expected \"" + keyword + " <n>\", got \"" + line + "\"");
  }
  try {
    return std::stoull(line.substr(keyword.size() + 1));
  } catch (const std::exception&) {
    throw DataError("checkpoint: bad count in \"" + line + "\"");
  }
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("checkpoint: cannot open " + path + " for writing");
  out << kMagicLine << "\n";
  out << "step " << ck.step << "\n";
  out << "config " << ck.config.size() << "\n";
  for (const auto& [key, value] : ck.config) {
    if (key.find(' ') != std::string::npos || key.empty()) {
      throw DataError("checkpoint: invalid config key \"" + key + "\"");
    }
    out << key << " " << value << "\n";
  }
  out << "tensors " << ck.tensors.size() << "\n";
  for (const auto& [name, t] : ck.tensors) {
    if (name.find(' ') != std::string::npos || name.empty()) {
      throw DataError("checkpoint: invalid tensor name \"" + name + "\"");
    }
    out << name << "\n";
    (void)t;
  }
  out << "end-header\n";
  for (const auto& [name, t] : ck.tensors) {
    (void)name;
    write_tensor(out, t);
  }
  if (!out) throw DataError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path);
  if (next_line(in, "magic") != kMagicLine) {
    throw DataError("checkpoint: bad magic line in " + path);
  }
  Checkpoint ck;
  const std::string step_line = next_line(in, "step");
  ck.step = parse_count(step_line, "step");

  const std::uint64_t n_config = parse_count(next_line(in, "config count"), "config");
  for (std::uint64_t i = 0; i < n_config; ++i) {
    const std::string line = next_line(in, "config entry");
    const std::size_t space = line.find(' ');
    if (space == std::string::npos || space == 0) {
      throw DataError("checkpoint: malformed config line \"" + line + "\"");
    }
    const std::string key = line.substr(0, space);
    if (!ck.config.emplace(key, line.substr(space + 1)).second) {
      throw DataError("checkpoint: duplicate config key " + key);
    }
  }

  const std::uint64_t n_tensors = parse_count(next_line(in, "tensor count"), "tensors");
  std::vector<std::string> names;
  names.reserve(n_tensors);
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    const std::string name = next_line(in, "tensor name");
    if (name.empty() || name == "end-header") {
      throw DataError("checkpoint: manifest shorter than its declared count");
    }
    names.push_back(name);
  }
  if (next_line(in, "end-header") != "end-header") {
    throw DataError("checkpoint: missing end-header marker");
  }
  for (const std::string& name : names) {
    if (ck.find(name) != nullptr) {
      throw DataError("checkpoint: duplicate tensor " + name);
    }
    ck.tensors.emplace_back(name, read_tensor(in));
  }
  return ck;
}

void apply_tensors(const Checkpoint& ck, NamedParams& params) {
  for (auto& [name, param] : params) {
    const Tensor* loaded = ck.find(name);
    if (loaded == nullptr) {
      throw DataError("checkpoint: missing parameter " + name);
    }
    if (loaded->shape() != param.shape()) {
      throw DataError("checkpoint: parameter " + name + " has shape " +
                      shape_str(loaded->shape()) + ", model expects " +
                      shape_str(param.shape()));
    }
    param.mutable_data() = loaded->data();
  }
}

}  // namespace side
