// SPDX-License-Identifier: Apache-2.0

#include "detrack/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace detrack {

namespace {

constexpr char kMagic[8] = {'D', 'T', 'R', 'A', 'C', 'K', 'C', 'K'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string_view bytes(std::size_t n) {
    need(n);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::string string() { return std::string(bytes(get<std::uint32_t>())); }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw std::runtime_error("corrupt checkpoint: truncated data");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string encode_params(const std::vector<NamedTensor>& params) {
  std::string out;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    auto t = p.value.to(torch::kFloat32).contiguous();
    put_string(out, p.name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
    for (auto d : t.sizes()) put<std::int64_t>(out, d);
    out.append(static_cast<const char*>(t.data_ptr()), t.numel() * sizeof(float));
  }
  return out;
}

std::vector<NamedTensor> decode_params(std::string_view data) {
  Reader r(data);
  const auto n = r.get<std::uint32_t>();
  std::vector<NamedTensor> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedTensor p;
    p.name = r.string();
    const auto ndim = r.get<std::uint32_t>();
    if (ndim > 8) throw std::runtime_error("corrupt checkpoint: bad tensor rank");
    std::vector<std::int64_t> dims(ndim);
    std::int64_t numel = 1;
    for (auto& d : dims) {
      d = r.get<std::int64_t>();
      if (d < 0 || d > (std::int64_t{1} << 32)) throw std::runtime_error("corrupt checkpoint: bad dim");
      numel *= d;
    }
    auto raw = r.bytes(static_cast<std::size_t>(numel) * sizeof(float));
    p.value = torch::empty(dims, torch::kFloat32);
    std::memcpy(p.value.data_ptr(), raw.data(), raw.size());
    out.push_back(std::move(p));
  }
  if (!r.done()) throw std::runtime_error("corrupt checkpoint: trailing parameter bytes");
  return out;
}

std::string encode_meta(const std::map<std::string, std::string>& meta) {
  std::string out;
  for (const auto& [k, v] : meta) out += k + "=" + v + "\n";
  return out;
}

std::map<std::string, std::string> decode_meta(std::string_view text) {
  std::map<std::string, std::string> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("corrupt checkpoint: bad meta line");
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

}  // namespace

std::int64_t Checkpoint::meta_int(const std::string& key, std::int64_t fallback) const {
  auto it = meta.find(key);
  if (it == meta.end()) return fallback;
  return std::stoll(it->second);
}

std::string serialize_checkpoint(const Checkpoint& ck) {
  const std::vector<std::pair<std::string, std::string>> sections = {
      {"meta", encode_meta(ck.meta)},
      {"config", ck.config},
      {"params", encode_params(ck.params)},
      {"optimizer", ck.optimizer},
      {"rng", ck.rng},
  };
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(sections.size()));
  for (const auto& [name, body] : sections) {
    put_string(out, name);
    put<std::uint64_t>(out, body.size());
    out += body;
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("corrupt checkpoint: bad magic");
  Reader r(std::string_view(bytes).substr(sizeof(kMagic)));
  Checkpoint ck;
  ck.version = r.get<std::uint32_t>();
  if (ck.version == 0) throw std::runtime_error("corrupt checkpoint: version 0");
  const auto count = r.get<std::uint32_t>();
  bool has_params = false;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = r.string();
    const auto size = r.get<std::uint64_t>();
    const auto body = r.bytes(size);
    if (name == "meta") ck.meta = decode_meta(body);
    else if (name == "config") ck.config = std::string(body);
    else if (name == "params") ck.params = decode_params(body), has_params = true;
    else if (name == "optimizer") ck.optimizer = std::string(body);
    else if (name == "rng") ck.rng = std::string(body);
    // unknown sections belong to newer writers; skip them
  }
  if (!r.done()) throw std::runtime_error("corrupt checkpoint: trailing bytes");
  if (!has_params) throw std::runtime_error("corrupt checkpoint: no parameter section");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto bytes = serialize_checkpoint(ck);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // write-then-rename so an interrupted save never clobbers a good file
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return deserialize_checkpoint(ss.str());
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

std::vector<NamedTensor> capture_params(const torch::nn::Module& module) {
  std::vector<NamedTensor> out;
  torch::NoGradGuard guard;
  for (const auto& item : module.named_parameters())
    out.push_back({item.key(), item.value().detach().to(torch::kFloat32).contiguous().clone()});
  for (const auto& item : module.named_buffers())
    out.push_back({item.key(), item.value().detach().to(torch::kFloat32).contiguous().clone()});
  return out;
}

void restore_params(torch::nn::Module& module, const std::vector<NamedTensor>& params) {
  std::map<std::string, const torch::Tensor*> by_name;
  for (const auto& p : params) by_name[p.name] = &p.value;
  torch::NoGradGuard guard;
  auto assign = [&](const std::string& name, torch::Tensor& target) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint is missing parameter " + name);
    if (it->second->sizes() != target.sizes())
      throw std::runtime_error("checkpoint shape mismatch for parameter " + name);
    target.copy_(*it->second);
  };
  for (auto& item : module.named_parameters()) assign(item.key(), item.value());
  for (auto& item : module.named_buffers()) assign(item.key(), item.value());
}

std::uint64_t parameter_hash(const std::vector<torch::Tensor>& tensors) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& t : tensors) {
    auto c = t.detach().contiguous();
    const auto* p = static_cast<const unsigned char*>(c.data_ptr());
    const auto n = static_cast<std::size_t>(c.numel()) * c.element_size();
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace detrack
