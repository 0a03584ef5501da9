// Copyright 2026 The NeoPlan Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Per-convolution schedule search and the on-disk schedule database.
//
// Database file:
//   "NPSD" | u32 version | records...
//   record = u32 payload length | payload | u32 crc32(payload)
// All integers little-endian. A payload holds one (cpu id, workload) key and
// its measured schedules, fastest first.

#pragma once

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "neoplan/conv.hpp"
#include "neoplan/error.hpp"

namespace neoplan {

struct CandidateSpace {
  std::vector<int> ic_bn;
  std::vector<int> oc_bn;
  std::vector<int> reg_n;
  std::vector<bool> unroll;

  std::size_t size() const { return ic_bn.size() * oc_bn.size() * reg_n.size() * unroll.size(); }
};

struct MeasuredScheme {
  ConvSchedule schedule;
  double mean_ns = 0.0;
  double stderr_ns = 0.0;
  int repeats = 0;

  friend bool operator==(const MeasuredScheme&, const MeasuredScheme&) = default;
};

/// Divisors of n, largest first.
inline std::vector<int> factors_descending(int n) {
  std::vector<int> out;
  for (int d = n; d >= 1; --d) {
    if (n % d == 0) out.push_back(d);
  }
  return out;
}

inline CandidateSpace generate_candidates(const ConvWorkload& wl) {
  CandidateSpace space;
  space.ic_bn = factors_descending(wl.in_channel);
  space.oc_bn = factors_descending(wl.out_channel);
  for (int r : {32, 16, 8, 4, 2}) {
    if (r <= wl.out_w()) space.reg_n.push_back(r);
  }
  // A 1-wide output row admits no register blocking beyond one column.
  if (space.reg_n.empty()) space.reg_n.push_back(1);
  space.unroll = {true, false};
  return space;
}

/// Mean and standard error (sample stddev / sqrt(n); 0 when n == 1).
inline std::pair<double, double> mean_and_stderr(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  if (xs.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

struct MeasureOptions {
  int repeats = 20;
  int warmups = 3;
  uint64_t seed = 7;
};

/// Times conv_blocked for one schedule on data randomized once.
inline MeasuredScheme measure(const ConvWorkload& wl, const ConvSchedule& sch, ThreadPool& pool,
                              const MeasureOptions& opt = {}) {
  wl.validate();
  NEOPLAN_CHECK(sch.valid_for(wl), ErrorCode::kScheduleInvalid,
                "schedule " + sch.str() + " invalid for " + wl.str());
  NEOPLAN_CHECK(opt.repeats >= 1, ErrorCode::kInvalidArgument, "repeats must be >= 1");
  const float bound = std::sqrt(3.0f / static_cast<float>(wl.in_channel * wl.kernel_h * wl.kernel_w));
  Tensor x = pack_data(random_tensor({1, wl.in_channel, wl.in_h, wl.in_w}, Layout::nchw(), opt.seed),
                       sch.ic_bn);
  Tensor w = pack_weights(random_tensor({wl.out_channel, wl.in_channel, wl.kernel_h, wl.kernel_w},
                                        Layout::kcrs(), opt.seed + 1, -bound, bound),
                          sch.ic_bn, sch.oc_bn);
  const Layout out_layout = Layout::nchwc(sch.oc_bn);
  Tensor out(conv_output_shape(1, wl, out_layout), out_layout);
  for (int i = 0; i < std::max(opt.warmups, 1); ++i) {
    conv_blocked_into(x.view(), w.view(), wl, sch, {}, out.mutable_view(), pool);
  }
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(opt.repeats));
  for (int i = 0; i < opt.repeats; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    conv_blocked_into(x.view(), w.view(), wl, sch, {}, out.mutable_view(), pool);
    auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
  }
  auto [mean, se] = mean_and_stderr(times);
  return {sch, std::max(mean, 1.0), se, opt.repeats};
}

/// "<model name>/<physical cores>c/<lanes>l", so entries never cross
/// incompatible machines.
inline std::string cpu_identifier() {
  std::string model = "unknown-cpu";
  std::ifstream info("/proc/cpuinfo");
  for (std::string line; std::getline(info, line);) {
    if (line.starts_with("model name")) {
      auto pos = line.find(':');
      if (pos != std::string::npos) {
        model = line.substr(pos + 1);
        model.erase(0, model.find_first_not_of(' '));
      }
      break;
    }
  }
  return model + "/" + std::to_string(physical_core_count()) + "c/" +
         std::to_string(vector_lane_width()) + "l";
}

struct DbKey {
  std::string cpu;
  ConvWorkload workload;
  friend auto operator<=>(const DbKey&, const DbKey&) = default;
};

namespace detail {

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));  // host is little-endian (checked below)
    bytes.insert(bytes.end(), buf, buf + sizeof(T));
  }
  void put_string(const std::string& s) {
    put<uint32_t>(static_cast<uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  std::vector<unsigned char> bytes;
};

class ByteReader {
 public:
  ByteReader(const unsigned char* data, std::size_t size, ErrorCode on_error)
      : data_(data), size_(size), code_(on_error) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    auto n = get<uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  const unsigned char* take(std::size_t n) {
    need(n);
    const unsigned char* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return size_ - pos_; }
  bool done() const { return pos_ == size_; }

 private:
  void need(std::size_t n) const {
    if (size_ - pos_ < n) throw Error(code_, "unexpected end of data");
  }
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  ErrorCode code_;
};

static_assert(std::endian::native == std::endian::little, "file formats assume little-endian");

inline uint32_t crc32_of(const unsigned char* data, std::size_t n) {
  return static_cast<uint32_t>(::crc32(0L, data, static_cast<uInt>(n)));
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::kIoError, "read failed: " + path.string());
  return bytes;
}

inline void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::kIoError, "write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot replace " + path.string() + ": " + ec.message());
}

}  // namespace detail

/// Measured schedules per (cpu, workload), each list fastest first.
class ScheduleDb {
 public:
  static constexpr uint32_t kVersion = 1;
  static constexpr char kMagic[4] = {'N', 'P', 'S', 'D'};

  ScheduleDb() = default;

  /// Opens a file-backed database; a missing file starts empty.
  static ScheduleDb open(const std::filesystem::path& path) {
    ScheduleDb db;
    db.path_ = path;
    if (std::filesystem::exists(path)) db.load(detail::read_file(path));
    return db;
  }

  std::optional<std::vector<MeasuredScheme>> get(const DbKey& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void put(const DbKey& key, std::vector<MeasuredScheme> schemes) {
    for (const auto& m : schemes) {
      NEOPLAN_CHECK(m.schedule.valid_for(key.workload), ErrorCode::kScheduleInvalid,
                    "schedule " + m.schedule.str() + " invalid for " + key.workload.str());
    }
    std::stable_sort(schemes.begin(), schemes.end(),
                     [](const auto& a, const auto& b) { return a.mean_ns < b.mean_ns; });
    entries_[key] = std::move(schemes);
  }

  std::size_t size() const { return entries_.size(); }
  const std::map<DbKey, std::vector<MeasuredScheme>>& entries() const { return entries_; }
  const std::filesystem::path& path() const { return path_; }

  void save() const {
    NEOPLAN_CHECK(!path_.empty(), ErrorCode::kIoError, "database has no backing file");
    save_as(path_);
  }

  void save_as(const std::filesystem::path& path) const { detail::write_file(path, serialize()); }

  std::vector<unsigned char> serialize() const {
    detail::ByteWriter out;
    out.bytes.insert(out.bytes.end(), kMagic, kMagic + 4);
    out.put<uint32_t>(kVersion);
    for (const auto& [key, schemes] : entries_) {
      detail::ByteWriter rec;
      rec.put_string(key.cpu);
      const auto& w = key.workload;
      for (int v : {w.in_channel, w.out_channel, w.in_h, w.in_w, w.kernel_h, w.kernel_w, w.stride,
                    w.pad}) {
        rec.put<int32_t>(v);
      }
      rec.put<uint32_t>(static_cast<uint32_t>(schemes.size()));
      for (const auto& m : schemes) {
        rec.put<int32_t>(m.schedule.ic_bn);
        rec.put<int32_t>(m.schedule.oc_bn);
        rec.put<int32_t>(m.schedule.reg_n);
        rec.put<uint8_t>(m.schedule.unroll_ker ? 1 : 0);
        rec.put<double>(m.mean_ns);
        rec.put<double>(m.stderr_ns);
        rec.put<int32_t>(m.repeats);
      }
      out.put<uint32_t>(static_cast<uint32_t>(rec.bytes.size()));
      out.bytes.insert(out.bytes.end(), rec.bytes.begin(), rec.bytes.end());
      out.put<uint32_t>(detail::crc32_of(rec.bytes.data(), rec.bytes.size()));
    }
    return out.bytes;
  }

  void load(const std::vector<unsigned char>& bytes) {
    detail::ByteReader in(bytes.data(), bytes.size(), ErrorCode::kCorruptDb);
    const unsigned char* magic = in.take(4);
    NEOPLAN_CHECK(std::memcmp(magic, kMagic, 4) == 0, ErrorCode::kCorruptDb, "bad database magic");
    const auto version = in.get<uint32_t>();
    NEOPLAN_CHECK(version == kVersion, ErrorCode::kCorruptDb,
                  "unsupported database version " + std::to_string(version));
    std::map<DbKey, std::vector<MeasuredScheme>> entries;
    while (!in.done()) {
      const auto len = in.get<uint32_t>();
      const unsigned char* payload = in.take(len);
      const auto crc = in.get<uint32_t>();
      NEOPLAN_CHECK(crc == detail::crc32_of(payload, len), ErrorCode::kCorruptDb,
                    "record checksum mismatch");
      detail::ByteReader rec(payload, len, ErrorCode::kCorruptDb);
      DbKey key;
      key.cpu = rec.get_string();
      auto& w = key.workload;
      for (int* v : {&w.in_channel, &w.out_channel, &w.in_h, &w.in_w, &w.kernel_h, &w.kernel_w,
                     &w.stride, &w.pad}) {
        *v = rec.get<int32_t>();
      }
      const auto count = rec.get<uint32_t>();
      constexpr std::size_t kSchemeBytes = 3 * 4 + 1 + 2 * 8 + 4;
      NEOPLAN_CHECK(count <= rec.remaining() / kSchemeBytes, ErrorCode::kCorruptDb,
                    "scheme count exceeds record");
      std::vector<MeasuredScheme> schemes(count);
      for (auto& m : schemes) {
        m.schedule.ic_bn = rec.get<int32_t>();
        m.schedule.oc_bn = rec.get<int32_t>();
        m.schedule.reg_n = rec.get<int32_t>();
        m.schedule.unroll_ker = rec.get<uint8_t>() != 0;
        m.mean_ns = rec.get<double>();
        m.stderr_ns = rec.get<double>();
        m.repeats = rec.get<int32_t>();
      }
      NEOPLAN_CHECK(rec.done(), ErrorCode::kCorruptDb, "trailing bytes in record");
      entries[key] = std::move(schemes);
    }
    entries_ = std::move(entries);
  }

 private:
  std::filesystem::path path_;
  std::map<DbKey, std::vector<MeasuredScheme>> entries_;
};

struct SearchOptions {
  MeasureOptions measure;
  /// Maximum candidates to measure; 0 walks the whole space. Every
  /// (ic_bn, oc_bn) pair is kept and (reg_n, unroll) combos are sampled.
  std::size_t budget = 0;
  uint64_t seed = 1;
  std::string cpu = cpu_identifier();
};

/// Candidate schedules visited by local_search, in enumeration order.
inline std::vector<ConvSchedule> search_schedules(const ConvWorkload& wl, std::size_t budget,
                                                  uint64_t seed) {
  const CandidateSpace space = generate_candidates(wl);
  std::vector<std::pair<int, bool>> inner;
  for (int r : space.reg_n)
    for (bool u : space.unroll) inner.emplace_back(r, u);
  const std::size_t pairs = space.ic_bn.size() * space.oc_bn.size();
  std::size_t per_pair = inner.size();
  if (budget > 0 && space.size() > budget) per_pair = std::max<std::size_t>(1, budget / pairs);
  std::mt19937_64 rng(seed);
  std::vector<ConvSchedule> out;
  for (int ic : space.ic_bn)
    for (int oc : space.oc_bn) {
      std::vector<std::pair<int, bool>> pick = inner;
      if (per_pair < inner.size()) {
        std::shuffle(pick.begin(), pick.end(), rng);
        pick.resize(per_pair);
      }
      for (auto [r, u] : pick) out.push_back({ic, oc, r, u});
    }
  return out;
}

/// Measures the candidate space of `wl`, or returns the cached list when the
/// database already holds this workload for this cpu.
inline std::vector<MeasuredScheme> local_search(const ConvWorkload& wl, ScheduleDb& db,
                                                ThreadPool& pool, const SearchOptions& opt = {},
                                                bool* cache_hit = nullptr) {
  const DbKey key{opt.cpu, wl};
  if (auto cached = db.get(key)) {
    if (cache_hit) *cache_hit = true;
    return *cached;
  }
  if (cache_hit) *cache_hit = false;
  std::vector<MeasuredScheme> results;
  for (const auto& sch : search_schedules(wl, opt.budget, opt.seed)) {
    results.push_back(measure(wl, sch, pool, opt.measure));
  }
  db.put(key, results);
  return *db.get(key);
}

}  // namespace neoplan
