#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <type_traits>

#include "fedcon/federation.hpp"

namespace fedcon {

class CheckpointError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Little-endian binary archive. Parameter sets are written in lexicographic
// name order with role and entry-kind tags.
//
//   magic "FEDCONCK" | u32 version | u8 scalar bytes
//   u64 round | u64 seed | state(server) | set(server velocity)
//   u64 clients | per client: u8 has_projector [set] | u8 has_target [set]
//
//   state = set(online) set(target) u64 step
//   set   = u64 count | per entry: u32 name_len name u8 role u8 kind u32 rank u64 dims[rank] data

namespace ckpt {

inline constexpr char kMagic[8] = {'F', 'E', 'D', 'C', 'O', 'N', 'C', 'K'};
inline constexpr std::uint32_t kVersion = 1;

class Writer {
public:
  explicit Writer(std::ostream& out) : out_(out) {}
  template <typename U>
  void put(U v) {
    static_assert(std::is_arithmetic_v<U>);
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), std::streamsize(n)); }

private:
  std::ostream& out_;
};

class Reader {
public:
  Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}
  template <typename U>
  U get() {
    U v{};
    bytes(&v, sizeof v);
    return v;
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), std::streamsize(n));
    if (std::size_t(in_.gcount()) != n) throw CheckpointError(source_ + ": truncated checkpoint");
  }
  const std::string& source() const { return source_; }

private:
  std::istream& in_;
  std::string source_;
};

template <typename T>
void write_set(Writer& w, const ParameterSet<T>& set) {
  w.put<std::uint64_t>(set.size());
  for (const auto& [name, e] : set) {
    w.put<std::uint32_t>(std::uint32_t(name.size()));
    w.bytes(name.data(), name.size());
    w.put<std::uint8_t>(std::uint8_t(e.role));
    w.put<std::uint8_t>(std::uint8_t(e.kind));
    w.put<std::uint32_t>(std::uint32_t(e.value.rank()));
    for (std::size_t d : e.value.shape()) w.put<std::uint64_t>(d);
    w.bytes(e.value.data(), e.value.size() * sizeof(T));
  }
}

template <typename T>
ParameterSet<T> read_set(Reader& r) {
  ParameterSet<T> set;
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(r.get<std::uint32_t>(), '\0');
    r.bytes(name.data(), name.size());
    const auto role = r.get<std::uint8_t>();
    const auto kind = r.get<std::uint8_t>();
    if (role > std::uint8_t(Role::projector) || kind > std::uint8_t(EntryKind::buffer))
      throw CheckpointError(r.source() + ": bad role or kind tag for '" + name + "'");
    Shape shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = r.get<std::uint64_t>();
    Tensor<T> value(shape);
    r.bytes(value.data(), value.size() * sizeof(T));
    set.add(std::move(name), std::move(value), Role(role), EntryKind(kind));
  }
  return set;
}

template <typename T>
void write_state(Writer& w, const ContrastiveState<T>& s) {
  write_set(w, s.online);
  write_set(w, s.target);
  w.put<std::uint64_t>(s.step);
}

template <typename T>
ContrastiveState<T> read_state(Reader& r) {
  ContrastiveState<T> s;
  s.online = read_set<T>(r);
  s.target = read_set<T>(r);
  s.step = r.get<std::uint64_t>();
  return s;
}

inline void write_header(Writer& w, std::uint8_t scalar_bytes) {
  w.bytes(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint8_t>(scalar_bytes);
}

inline void read_header(Reader& r, std::uint8_t scalar_bytes) {
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw CheckpointError(r.source() + ": not a checkpoint file");
  if (const auto v = r.get<std::uint32_t>(); v != kVersion)
    throw CheckpointError(r.source() + ": unsupported checkpoint version " + std::to_string(v));
  if (r.get<std::uint8_t>() != scalar_bytes) throw CheckpointError(r.source() + ": scalar type mismatch");
}

}  // namespace ckpt

/// Writes the complete mutable federation state (atomically via rename).
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const FederationState<T>& fed) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp);
    ckpt::Writer w(out);
    ckpt::write_header(w, sizeof(T));
    w.put<std::uint64_t>(fed.round);
    w.put<std::uint64_t>(fed.seed);
    ckpt::write_state(w, fed.server);
    ckpt::write_set(w, fed.server_optimizer.velocity());
    w.put<std::uint64_t>(fed.clients.size());
    for (const auto& c : fed.clients) {
      w.put<std::uint8_t>(c.projector.has_value());
      if (c.projector) ckpt::write_set(w, *c.projector);
      w.put<std::uint8_t>(c.target.has_value());
      if (c.target) ckpt::write_set(w, *c.target);
    }
    if (!out) throw CheckpointError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

/// Restores a checkpoint into `fed`, whose data shards must already be set up
/// from the same split.
template <typename T>
void load_checkpoint(const std::filesystem::path& path, FederationState<T>& fed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  ckpt::Reader r(in, path.string());
  ckpt::read_header(r, sizeof(T));
  fed.round = r.get<std::uint64_t>();
  if (const auto seed = r.get<std::uint64_t>(); seed != fed.seed)
    throw CheckpointError(path.string() + ": checkpoint seed " + std::to_string(seed) + " does not match run seed " +
                          std::to_string(fed.seed));
  auto server = ckpt::read_state<T>(r);
  require_compatible(server.online, fed.server.online, "checkpoint");
  fed.server = std::move(server);
  fed.server_optimizer.velocity() = ckpt::read_set<T>(r);
  const auto clients = r.get<std::uint64_t>();
  if (clients != fed.clients.size())
    throw CheckpointError(path.string() + ": checkpoint has " + std::to_string(clients) + " clients, run has " +
                          std::to_string(fed.clients.size()));
  for (auto& c : fed.clients) {
    c.projector.reset();
    c.target.reset();
    if (r.get<std::uint8_t>()) c.projector = ckpt::read_set<T>(r);
    if (r.get<std::uint8_t>()) c.target = ckpt::read_set<T>(r);
  }
}

/// Single contrastive state (online, target, step).
template <typename T>
void save_state(const std::filesystem::path& path, const ContrastiveState<T>& state) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path.string());
  ckpt::Writer w(out);
  ckpt::write_header(w, sizeof(T));
  ckpt::write_state(w, state);
}

template <typename T>
ContrastiveState<T> load_state(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  ckpt::Reader r(in, path.string());
  ckpt::read_header(r, sizeof(T));
  return ckpt::read_state<T>(r);
}

}  // namespace fedcon
