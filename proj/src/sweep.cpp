// Copyright 2026 The dmlab Authors
// SPDX-License-Identifier: Apache-2.0
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

#include "dmlab/sweep.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "dmlab/tuning.hpp"

namespace dmlab::sweep {

using json = nlohmann::json;

void SweepPlan::validate() const {
  if (iterations < 1) throw SweepError("iterations must be at least 1");
  if (series.sizes.empty()) throw SweepError("sweep has no dataset sizes");
  if (latencies.empty()) throw SweepError("sweep has no latency profiles");
  if (ccas.empty()) throw SweepError("sweep has no congestion control algorithms");
  if (modes.empty()) throw SweepError("sweep has no transfer modes");
  if (!std::is_sorted(series.sizes.begin(), series.sizes.end()) ||
      std::adjacent_find(series.sizes.begin(), series.sizes.end()) != series.sizes.end())
    throw SweepError("sweep sizes must be strictly increasing");
  for (auto s : series.sizes)
    if (!series.per_size_spec.count(s)) throw SweepError("no dataset spec for size " + format_bytes(s));
  for (const auto& l : latencies) l.validate();
}

std::size_t SweepPlan::cell_count() const {
  return series.sizes.size() * latencies.size() * ccas.size() * modes.size() * iterations;
}

std::string to_string(CellStatus s) { return s == CellStatus::ok ? "ok" : "failed"; }

std::vector<CellKey> plan_cells(const SweepPlan& plan) {
  std::vector<CellKey> cells;
  cells.reserve(plan.cell_count());
  for (const auto& lat : plan.latencies)
    for (const auto& cca : plan.ccas)
      for (auto mode : plan.modes)
        for (unsigned it = 0; it < plan.iterations; ++it)
          for (auto size : plan.series.sizes) cells.push_back({size, lat.one_way_delay, cca, mode, it});
  return cells;
}

std::string utc_timestamp() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  ::gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

SweepRecord make_record(const CellKey& cell, const mover::TransferResult& result) {
  SweepRecord r;
  r.cell = cell;
  r.bytes_moved = result.bytes_moved;
  r.wall_time_ns = result.wall_time.count();
  r.throughput_bps = result.throughput_bps;
  r.files_ok = result.files_ok;
  r.files_failed = result.files_failed;
  r.integrity = result.integrity;
  r.status = result.ok() ? CellStatus::ok : CellStatus::failed;
  if (!result.ok()) {
    r.error = std::to_string(result.files_failed) + " file(s) failed";
    if (!result.failures.empty())
      r.error += "; first: " + result.failures.front().relative_path + ": " + result.failures.front().reason;
  }
  return r;
}

SweepRecord make_failure(const CellKey& cell, const std::string& error) {
  SweepRecord r;
  r.cell = cell;
  r.status = CellStatus::failed;
  r.error = error;
  return r;
}

// ---- serialization --------------------------------------------------------------

namespace {

mover::Integrity integrity_from_string(const std::string& s) {
  if (s == "verified") return mover::Integrity::verified;
  if (s == "failed") return mover::Integrity::failed;
  if (s == "skipped") return mover::Integrity::skipped;
  throw SweepError("unknown integrity value '" + s + "'");
}

}  // namespace

std::string header_line() {
  json h{{"schema", kRecordSchema}, {"version", kRecordSchemaVersion}, {"loop_order", kLoopOrder}};
  return h.dump();
}

std::string record_to_line(const SweepRecord& r) {
  json j{{"size", r.cell.size},
         {"latency_us", r.cell.latency.count()},
         {"cca", r.cell.cca},
         {"mode", protocol::to_string(r.cell.mode)},
         {"iteration", r.cell.iteration},
         {"status", to_string(r.status)},
         {"error", r.error},
         {"bytes_moved", r.bytes_moved},
         {"wall_time_ns", r.wall_time_ns},
         {"throughput_bps", r.throughput_bps},
         {"files_ok", r.files_ok},
         {"files_failed", r.files_failed},
         {"integrity", mover::to_string(r.integrity)},
         {"timestamp", r.timestamp},
         {"host", r.host_fingerprint}};
  return j.dump();
}

SweepRecord record_from_line(std::string_view line) {
  try {
    auto j = json::parse(line);
    SweepRecord r;
    r.cell.size = j.at("size").get<ByteCount>();
    r.cell.latency = microseconds(j.at("latency_us").get<std::int64_t>());
    r.cell.cca = j.at("cca").get<std::string>();
    r.cell.mode = protocol::session_mode_from_string(j.at("mode").get<std::string>());
    r.cell.iteration = j.at("iteration").get<unsigned>();
    auto status = j.at("status").get<std::string>();
    if (status != "ok" && status != "failed") throw SweepError("unknown status '" + status + "'");
    r.status = status == "ok" ? CellStatus::ok : CellStatus::failed;
    r.error = j.at("error").get<std::string>();
    r.bytes_moved = j.at("bytes_moved").get<ByteCount>();
    r.wall_time_ns = j.at("wall_time_ns").get<std::int64_t>();
    r.throughput_bps = j.at("throughput_bps").get<double>();
    r.files_ok = j.at("files_ok").get<std::uint64_t>();
    r.files_failed = j.at("files_failed").get<std::uint64_t>();
    r.integrity = integrity_from_string(j.at("integrity").get<std::string>());
    r.timestamp = j.at("timestamp").get<std::string>();
    r.host_fingerprint = j.at("host").get<std::string>();
    return r;
  } catch (const json::exception& e) {
    throw SweepError(std::string("malformed sweep record: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw SweepError(std::string("malformed sweep record: ") + e.what());
  }
}

namespace {

void check_header(const std::string& line, const fs::path& path) {
  json h;
  try {
    h = json::parse(line);
  } catch (const json::exception&) {
    throw SweepError(path.string() + " does not start with a sweep record header");
  }
  if (h.value("schema", "") != kRecordSchema)
    throw SweepError(path.string() + " is not a dmlab sweep record log");
  if (h.value("version", 0) != kRecordSchemaVersion)
    throw SweepError(path.string() + " has unsupported schema version " + std::to_string(h.value("version", 0)));
}

/// Parses complete lines; returns the byte length of the valid prefix.
std::size_t parse_log(const std::string& content, const fs::path& path, std::vector<SweepRecord>& out) {
  std::size_t pos = 0, line_no = 0, valid = 0;
  while (pos < content.size()) {
    auto nl = content.find('\n', pos);
    if (nl == std::string::npos) break;  // torn final write
    auto line = content.substr(pos, nl - pos);
    if (line_no == 0) {
      check_header(line, path);
    } else if (!line.empty()) {
      try {
        out.push_back(record_from_line(line));
      } catch (const SweepError& e) {
        throw SweepError(path.string() + ":" + std::to_string(line_no + 1) + ": " + e.what());
      }
    }
    ++line_no;
    pos = nl + 1;
    valid = pos;
  }
  return valid;
}

}  // namespace

std::vector<SweepRecord> read_records(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SweepError("cannot read record log " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  std::vector<SweepRecord> out;
  parse_log(ss.str(), path, out);
  return out;
}

RecordLog::RecordLog(fs::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw SweepError("cannot open record log " + path_.string());
  std::string content;
  {
    std::ifstream in(path_, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    content = ss.str();
  }
  if (content.empty()) {
    auto header = header_line() + "\n";
    if (::write(fd_, header.data(), header.size()) != static_cast<ssize_t>(header.size()))
      throw SweepError("cannot write record log header");
    ::fsync(fd_);
  } else {
    auto valid = parse_log(content, path_, records_);
    if (valid < content.size() && ::ftruncate(fd_, static_cast<off_t>(valid)) != 0)
      throw SweepError("cannot trim torn record at end of " + path_.string());
  }
  ::lseek(fd_, 0, SEEK_END);
}

RecordLog::~RecordLog() {
  if (fd_ >= 0) ::close(fd_);
}

void RecordLog::append(const SweepRecord& r) {
  auto line = record_to_line(r) + "\n";
  std::string_view rest = line;
  while (!rest.empty()) {
    ssize_t n = ::write(fd_, rest.data(), rest.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw SweepError("cannot append to " + path_.string());
    }
    rest.remove_prefix(static_cast<std::size_t>(n));
  }
  ::fsync(fd_);
  records_.push_back(r);
}

bool RecordLog::contains(const CellKey& k) const {
  return std::any_of(records_.begin(), records_.end(), [&](const SweepRecord& r) { return r.cell == k; });
}

// ---- driver -------------------------------------------------------------------------

std::vector<SweepRecord> run_sweep(const SweepPlan& plan, Environment& env, RecordLog& log, const RunOptions& options) {
  plan.validate();
  std::set<CellKey> done;
  for (const auto& r : log.records()) done.insert(r.cell);
  const auto cells = plan_cells(plan);
  if (std::all_of(cells.begin(), cells.end(), [&](const CellKey& c) { return done.count(c) > 0; }))
    return log.records();

  env.preflight(plan);
  const auto fingerprint = env.host_fingerprint();
  auto now = options.clock ? options.clock : utc_timestamp;

  struct Teardown {
    Environment& env;
    bool armed = false;
    ~Teardown() {
      if (!armed) return;
      try {
        env.clear_latency();
      } catch (...) {
      }
    }
  } teardown{env};

  for (const auto& lat : plan.latencies) {
    bool pending = std::any_of(cells.begin(), cells.end(), [&](const CellKey& c) {
      return c.latency == lat.one_way_delay && !done.count(c);
    });
    if (!pending) continue;
    env.apply_latency(lat);
    teardown.armed = true;
    for (const auto& cell : cells) {
      if (cell.latency != lat.one_way_delay || done.count(cell)) continue;
      SweepRecord rec;
      try {
        rec = make_record(cell, env.run_cell(plan, cell));
      } catch (const std::exception& e) {
        rec = make_failure(cell, e.what());
      }
      rec.timestamp = now();
      rec.host_fingerprint = fingerprint;
      log.append(rec);
      done.insert(cell);
      if (options.on_record) options.on_record(rec);
    }
    env.clear_latency();
    teardown.armed = false;
  }
  return log.records();
}

// ---- lab environment --------------------------------------------------------------

LabEnvironment::LabEnvironment(emulation::Emulator& emulator, LabOptions options)
    : emulator_(emulator), options_(std::move(options)) {}

void LabEnvironment::preflight(const SweepPlan& plan) {
  for (const auto& p : plan.latencies) emulator_.preflight(p);
  auto available = net::available_congestion_controls();
  for (const auto& c : plan.ccas) {
    if (std::find(available.begin(), available.end(), c) == available.end())
      throw SweepError("congestion control '" + c + "' is not available on this host");
  }
  auto peer = options_.route_through_emulator ? emulator_.route(options_.receiver) : options_.receiver;
  try {
    emulation::measure_rtt(peer, 1, Rtt{});
  } catch (const std::exception& e) {
    throw SweepError("receiver " + peer.str() + " is not reachable: " + e.what());
  }
}

void LabEnvironment::apply_latency(const emulation::LatencyProfile& p) { handle_ = emulator_.apply(p); }

void LabEnvironment::clear_latency() { handle_.clear(); }

std::string LabEnvironment::host_fingerprint() {
  auto target = tuning::TuningTarget::defaults();
  target.ring_rx.reset();
  target.ring_tx.reset();
  CommandRunner runner;
  return tuning::to_string(tuning::audit(target, tuning::SysctlTree(options_.sysctl_root), runner).overall);
}

dataset::DatasetManifest LabEnvironment::ensure_dataset(const SweepPlan& plan, ByteCount size, bool fresh) {
  auto spec = plan.series.per_size_spec.at(size);
  if (spec.root_path.is_relative()) spec.root_path = options_.dataset_root / spec.root_path;
  if (!fresh) {
    if (auto it = cache_.find(size); it != cache_.end()) return it->second;
    auto manifest_path = spec.root_path / dataset::kManifestFileName;
    std::error_code ec;
    if (fs::exists(manifest_path, ec)) {
      try {
        auto m = dataset::read_manifest(manifest_path);
        if (m.spec && *m.spec == spec && m.has_digests()) return cache_[size] = m;
      } catch (const std::exception&) {
      }
    }
  }
  std::error_code ec;
  fs::remove_all(spec.root_path, ec);
  auto m = dataset::generate_dataset(spec);
  return cache_[size] = m;
}

mover::TransferResult LabEnvironment::run_cell(const SweepPlan& plan, const CellKey& cell) {
  auto spec = plan.transfer_template;
  spec.cca = cell.cca;
  spec.mode = cell.mode;
  spec.peer = options_.route_through_emulator ? emulator_.route(options_.receiver) : options_.receiver;
  if (spec.sink.kind == mover::SinkEndpoint::Kind::directory) {
    auto sub = "size-" + format_bytes(cell.size);
    spec.sink.subdirectory = spec.sink.subdirectory.empty() ? sub : spec.sink.subdirectory + "/" + sub;
  }
  if (cell.mode == SessionMode::streaming) return run_streaming(plan, cell, spec);
  auto manifest = ensure_dataset(plan, cell.size, plan.regenerate_per_iteration && cell.iteration > 0);
  spec.source = mover::SourceEndpoint::from_directory(manifest.spec->root_path);
  return mover::transfer(spec, manifest);
}

mover::TransferResult LabEnvironment::run_streaming(const SweepPlan& plan, const CellKey& cell,
                                                    mover::TransferSpec spec) {
  const auto& ds = plan.series.per_size_spec.at(cell.size);
  auto watch = options_.dataset_root / "streaming-scratch" / ("size-" + format_bytes(cell.size));
  std::error_code ec;
  fs::remove_all(watch, ec);
  mover::StreamingWriter writer(watch);
  spec.source = mover::SourceEndpoint::from_directory(watch);

  std::exception_ptr writer_error;
  std::thread producer([&] {
    try {
      std::vector<std::byte> buf(static_cast<std::size_t>(std::min(options_.streaming_step, ds.file_size)));
      for (std::uint64_t i = 0; i < ds.file_count; ++i) {
        auto rel = dataset::entry_path(i);
        for (ByteCount off = 0; off < ds.file_size; off += buf.size()) {
          auto n = static_cast<std::size_t>(std::min<ByteCount>(buf.size(), ds.file_size - off));
          std::span<std::byte> block(buf.data(), n);
          dataset::fill_content(ds.content_seed, i, off, block);
          writer.append(rel, block);
        }
      }
    } catch (...) {
      writer_error = std::current_exception();
    }
    writer.complete();
  });
  mover::TransferResult result;
  try {
    result = mover::transfer_streaming(spec, watch, options_.streaming_quiescence);
  } catch (...) {
    producer.join();
    fs::remove_all(watch, ec);
    throw;
  }
  producer.join();
  fs::remove_all(watch, ec);
  if (writer_error) std::rethrow_exception(writer_error);
  if (result.files_ok != ds.file_count && result.integrity == mover::Integrity::verified)
    result.integrity = mover::Integrity::failed;
  return result;
}

}  // namespace dmlab::sweep
