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

#include "dmlab/cli.hpp"

#include <signal.h>
#include <time.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <functional>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "dmlab/calc.hpp"
#include "dmlab/config.hpp"
#include "dmlab/dataset.hpp"
#include "dmlab/emulation.hpp"
#include "dmlab/mover.hpp"
#include "dmlab/report.hpp"
#include "dmlab/sweep.hpp"
#include "dmlab/tuning.hpp"

namespace dmlab::cli {

namespace {

namespace fs = std::filesystem;
using std::chrono::microseconds;

constexpr const char* kVersion = "dmlab 1.0.0";

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Context {
  std::ostream& out;
  std::ostream& err;
  std::string config_path;
  std::optional<config::LabConfig> cfg;

  config::LabConfig& config() {
    if (!cfg) {
      config::LoadResult r;
      if (!config_path.empty())
        r = config::load_config(config_path);
      else
        r.config.resolve_paths(fs::current_path());
      for (const auto& w : r.warnings) err << "dmlab: warning: " << w << "\n";
      config::apply_environment(r.config);
      cfg = std::move(r.config);
    }
    return *cfg;
  }
};

using Action = std::function<int()>;
using Leaves = std::vector<std::pair<CLI::App*, Action>>;

// ---- argument conversion ------------------------------------------------------

template <typename Fn>
auto convert(const std::string& flag, const std::string& value, Fn&& fn) {
  try {
    return fn(value);
  } catch (const std::exception& e) {
    throw UsageError(flag + ": " + e.what());
  }
}

ByteCount bytes_arg(const std::string& flag, const std::string& v) { return convert(flag, v, parse_bytes); }
Bandwidth bandwidth_arg(const std::string& flag, const std::string& v) { return convert(flag, v, parse_bandwidth); }
microseconds duration_arg(const std::string& flag, const std::string& v) { return convert(flag, v, parse_duration); }
Rtt rtt_arg(const std::string& flag, const std::string& v) {
  return convert(flag, v, [](const std::string& s) { return Rtt(parse_duration(s)); });
}
net::Endpoint endpoint_arg(const std::string& flag, const std::string& v) {
  return convert(flag, v, net::Endpoint::parse);
}

double number_arg(const std::string& flag, const std::string& v) {
  return convert(flag, v, [](const std::string& s) {
    std::size_t used = 0;
    double d = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("not a number: '" + s + "'");
    return d;
  });
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

std::string plain(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string fixed0(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.0f", v);
  return buf;
}

/// Blocks SIGINT/SIGTERM for this thread and any thread started while it
/// lives, so the signal can be collected synchronously.
class SignalWait {
 public:
  SignalWait() {
    sigemptyset(&set_);
    sigaddset(&set_, SIGINT);
    sigaddset(&set_, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set_, &old_);
  }
  ~SignalWait() {
    timespec zero{0, 0};
    while (sigtimedwait(&set_, nullptr, &zero) > 0) {
    }
    pthread_sigmask(SIG_SETMASK, &old_, nullptr);
  }
  /// True once a signal arrived within `timeout`.
  bool wait(std::chrono::milliseconds timeout) {
    timespec ts{static_cast<time_t>(timeout.count() / 1000), static_cast<long>(timeout.count() % 1000) * 1000000};
    return sigtimedwait(&set_, nullptr, &ts) > 0;
  }

 private:
  sigset_t set_, old_;
};

// ---- shared printers ----------------------------------------------------------

void print_result(std::ostream& out, const mover::TransferResult& r) {
  out << "bytes_moved: " << r.bytes_moved << "\n"
      << "wall_time: " << plain(std::chrono::duration<double>(r.wall_time).count()) << " s\n"
      << "throughput: " << fixed0(r.throughput_bps) << " bps\n"
      << "files_ok: " << r.files_ok << "\n"
      << "files_failed: " << r.files_failed << "\n"
      << "integrity: " << mover::to_string(r.integrity) << "\n";
  if (!r.per_stream_bytes.empty()) {
    out << "per_stream_bytes:";
    for (auto b : r.per_stream_bytes) out << ' ' << b;
    out << "\n";
  }
  if (r.reconnects || r.resends) out << "reconnects: " << r.reconnects << "\nresends: " << r.resends << "\n";
  for (const auto& f : r.failures) out << "failed: " << f.relative_path << ": " << f.reason << "\n";
}

void print_session(std::ostream& out, const mover::SessionReport& s) {
  out << "session " << s.session_id << ": " << protocol::to_string(s.mode) << ", "
      << protocol::to_string(s.encryption) << ", " << s.streams_seen << " streams, " << s.files_ok << " ok, "
      << s.files_failed << " failed, " << s.bytes_verified << " bytes verified"
      << (s.discard ? " (discarded)" : "") << "\n";
  for (const auto& n : s.nacks) out << "  nack: " << n << "\n";
}

dataset::DatasetManifest manifest_for(const fs::path& root, const std::string& manifest_flag) {
  if (!manifest_flag.empty()) return dataset::read_manifest(manifest_flag);
  if (fs::exists(root / dataset::kManifestFileName)) return dataset::read_manifest(root / dataset::kManifestFileName);
  return dataset::index_directory(root);
}

// ---- calc ---------------------------------------------------------------------

void add_calc(CLI::App& root, Context& ctx, Leaves& leaves) {
  auto* grp = root.add_subcommand("calc", "Path-sizing and link-quality calculators");
  grp->require_subcommand(1);

  {
    auto o = std::make_shared<std::array<std::string, 2>>();
    auto* c = grp->add_subcommand("bdp", "Bandwidth-delay product in bytes");
    c->add_option("--bw", (*o)[0], "Path bandwidth, e.g. 10Gbps")->required();
    c->add_option("--rtt", (*o)[1], "Round-trip time, e.g. 100ms")->required();
    leaves.emplace_back(c, [o, &ctx] {
      ctx.out << calc::compute_bdp(bandwidth_arg("--bw", (*o)[0]), rtt_arg("--rtt", (*o)[1])) << " bytes\n";
      return kExitOk;
    });
  }
  {
    auto o = std::make_shared<std::array<std::string, 2>>();
    auto* c = grp->add_subcommand("ceiling", "Highest single-stream rate a window allows");
    c->add_option("--window", (*o)[0], "Window size, e.g. 64KiB")->required();
    c->add_option("--rtt", (*o)[1], "Round-trip time, e.g. 100ms")->required();
    leaves.emplace_back(c, [o, &ctx] {
      auto bw = calc::window_ceiling(bytes_arg("--window", (*o)[0]), rtt_arg("--rtt", (*o)[1]));
      ctx.out << bw.bits_per_second << " bps\n";
      return kExitOk;
    });
  }
  {
    auto o = std::make_shared<std::array<std::string, 2>>();
    (*o)[1] = "1500B";
    auto* c = grp->add_subcommand("ber", "Bit error rate implied by a packet loss rate");
    c->add_option("--loss", (*o)[0], "Packet loss rate in [0, 1], e.g. 4.6e-5")->required();
    c->add_option("--frame", (*o)[1], "Frame size")->capture_default_str();
    leaves.emplace_back(c, [o, &ctx] {
      auto loss = convert("--loss", (*o)[0], [](const std::string& s) { return PacketLossRate(number_arg("--loss", s)); });
      ctx.out << sci(calc::ber_from_packet_loss(loss, bytes_arg("--frame", (*o)[1])).ratio()) << "\n";
      return kExitOk;
    });
  }
  {
    auto o = std::make_shared<std::array<std::string, 2>>();
    (*o)[1] = "1500B";
    auto* c = grp->add_subcommand("loss", "Packet loss rate implied by a bit error rate");
    c->add_option("--ber", (*o)[0], "Bit error rate in [0, 1], e.g. 4e-9")->required();
    c->add_option("--frame", (*o)[1], "Frame size")->capture_default_str();
    leaves.emplace_back(c, [o, &ctx] {
      auto ber = convert("--ber", (*o)[0], [](const std::string& s) { return BitErrorRate(number_arg("--ber", s)); });
      auto est = calc::packet_loss_from_ber(ber, bytes_arg("--frame", (*o)[1]));
      ctx.out << sci(est.rate.ratio()) << (est.saturated ? " (saturated)" : "") << "\n";
      return kExitOk;
    });
  }
  {
    auto o = std::make_shared<std::vector<std::string>>();
    auto* c = grp->add_subcommand("volume", "Data moved per day at a sustained rate");
    c->add_option("--bw", *o, "Sustained rate(s); defaults to 1Gbps 10Gbps 100Gbps");
    leaves.emplace_back(c, [o, &ctx] {
      std::vector<std::string> rates = o->empty() ? std::vector<std::string>{"1Gbps", "10Gbps", "100Gbps"} : *o;
      for (const auto& r : rates) {
        auto bw = bandwidth_arg("--bw", r);
        auto bytes = calc::daily_volume(bw);
        ctx.out << format_bandwidth(bw) << ": " << bytes << " bytes/day = " << plain(calc::to_decimal_tb(bytes))
                << " TB/day exact, " << calc::rounded_tb(bytes) << " TB/day rounded\n";
      }
      return kExitOk;
    });
  }
}

// ---- dataset ------------------------------------------------------------------

void add_dataset(CLI::App& root, Context& ctx, Leaves& leaves) {
  auto* grp = root.add_subcommand("dataset", "Synthetic datasets");
  grp->require_subcommand(1);

  {
    struct Gen {
      std::string root, size, mode = "bulk";
      std::uint64_t count = 1, seed = 0;
      unsigned workers = 0;
      bool dry_run = false;
    };
    auto o = std::make_shared<Gen>();
    auto* c = grp->add_subcommand("gen", "Generate a uniform-size dataset with a manifest");
    c->add_option("--size", o->size, "File size, a power of two, e.g. 4MiB")->required();
    c->add_option("--count", o->count, "Number of files")->capture_default_str();
    c->add_option("--root", o->root, "Dataset directory (default: <datasets>/gen)");
    c->add_option("--seed", o->seed, "Content seed")->capture_default_str();
    c->add_option("--mode", o->mode, "bulk or streaming-source")
        ->check(CLI::IsMember({"bulk", "streaming-source"}))
        ->capture_default_str();
    c->add_option("--workers", o->workers, "Writer threads (0: automatic)");
    c->add_flag("--dry-run", o->dry_run, "Describe the dataset without writing it");
    leaves.emplace_back(c, [o, &ctx] {
      dataset::DatasetSpec spec;
      spec.file_size = bytes_arg("--size", o->size);
      spec.file_count = o->count;
      spec.root_path = o->root.empty() ? ctx.config().dataset_root / "gen" : fs::absolute(o->root);
      spec.content_seed = o->seed;
      spec.mode = dataset::dataset_mode_from_string(o->mode);
      spec.validate();
      if (o->dry_run) {
        ctx.out << "would generate " << spec.file_count << " files of " << format_bytes(spec.file_size) << " ("
                << spec.total_bytes() << " bytes) under " << spec.root_path.string() << "\n";
        return kExitOk;
      }
      dataset::GenerateOptions opts;
      opts.workers = o->workers;
      auto m = dataset::generate_dataset(spec, opts);
      ctx.out << "generated " << m.entries.size() << " files, " << m.total_bytes << " bytes under "
              << spec.root_path.string() << "\nfingerprint " << to_hex(m.fingerprint()) << "\n";
      return kExitOk;
    });
  }
  {
    struct Verify {
      std::string root, manifest;
    };
    auto o = std::make_shared<Verify>();
    auto* c = grp->add_subcommand("verify", "Re-digest a dataset against its manifest");
    c->add_option("--root", o->root, "Dataset directory")->required();
    c->add_option("--manifest", o->manifest, "Manifest file (default: <root>/.dmlab-manifest)");
    leaves.emplace_back(c, [o, &ctx] {
      fs::path root = fs::absolute(o->root);
      auto m = dataset::read_manifest(o->manifest.empty() ? root / dataset::kManifestFileName : fs::path(o->manifest));
      auto report = dataset::verify_dataset(m, root);
      for (const auto& i : report.issues)
        ctx.out << dataset::to_string(i.kind) << "\t" << i.relative_path << "\texpected " << i.expected_size
                << "\tactual " << i.actual_size << "\n";
      if (report.intact()) {
        ctx.out << "intact: " << m.entries.size() << " files, " << m.total_bytes << " bytes\n";
        return kExitOk;
      }
      ctx.err << "dmlab: " << report.issues.size() << " of " << m.entries.size() << " files failed verification\n";
      return kExitFailure;
    });
  }
  {
    struct Series {
      std::string kind = "bulk", min, max, budget, root_base;
    };
    auto o = std::make_shared<Series>();
    auto* c = grp->add_subcommand("series", "List the sizes and file counts of a sweep series");
    c->add_option("--kind", o->kind, "bulk or streaming")->check(CLI::IsMember({"bulk", "streaming"}))->capture_default_str();
    c->add_option("--min", o->min, "Smallest size (default: 1KiB bulk, 4MiB streaming)");
    c->add_option("--max", o->max, "Largest size (default: 1TiB)");
    c->add_option("--budget", o->budget, "Aggregate bytes per size (default: 1TiB)");
    leaves.emplace_back(c, [o, &ctx] {
      auto kind = dataset::series_kind_from_string(o->kind);
      auto min = o->min.empty() ? (kind == dataset::SeriesKind::bulk ? KiB : 4 * MiB) : bytes_arg("--min", o->min);
      auto max = o->max.empty() ? TiB : bytes_arg("--max", o->max);
      std::optional<ByteCount> budget;
      if (!o->budget.empty()) budget = bytes_arg("--budget", o->budget);
      dataset::SeriesOptions opts;
      opts.root_base = ctx.config().dataset_root;
      auto s = dataset::build_sweep_series(kind, min, max, budget, opts);
      ctx.out << dataset::to_string(s.kind) << ": " << s.sizes.size() << " sizes\n"
              << "size\tfile_size_bytes\tfile_count\ttotal_bytes\n";
      for (auto size : s.sizes) {
        const auto& spec = s.per_size_spec.at(size);
        ctx.out << format_bytes(size) << '\t' << size << '\t' << spec.file_count << '\t' << spec.total_bytes() << '\n';
      }
      return kExitOk;
    });
  }
}

// ---- serve / transfer / stream / stage ------------------------------------------

void add_serve(CLI::App& root, Context& ctx, Leaves& leaves) {
  struct Serve {
    std::string listen, root;
    bool discard = false;
  };
  auto o = std::make_shared<Serve>();
  auto* c = root.add_subcommand("serve", "Run a receiver until interrupted");
  c->add_option("--listen", o->listen, "HOST:PORT to bind (default from config, 0.0.0.0:5201)");
  c->add_option("--root", o->root, "Sink root directory (default from config)");
  c->add_flag("--discard", o->discard, "Verify and drop all data instead of writing it");
  leaves.emplace_back(c, [o, &ctx] {
    auto& cfg = ctx.config();
    auto listen = o->listen.empty() ? cfg.listen : endpoint_arg("--listen", o->listen);
    mover::ServeConfig sc;
    sc.root = o->root.empty() ? cfg.receiver_root : fs::absolute(o->root);
    sc.discard = o->discard;
    SignalWait signals;
    auto rx = mover::serve(listen, sc);
    ctx.out << "listening on " << rx.local_endpoint().str() << (sc.discard ? " (discard)" : ", root " + sc.root.string())
            << "\n"
            << std::flush;
    std::size_t shown = 0;
    for (;;) {
      bool stop = signals.wait(std::chrono::milliseconds(500));
      auto sessions = rx.sessions();
      for (; shown < sessions.size(); ++shown) print_session(ctx.out, sessions[shown]);
      ctx.out << std::flush;
      if (stop) break;
    }
    rx.stop();
    ctx.out << "stopped after " << shown << " sessions\n";
    return kExitOk;
  });
}

struct TransferFlags {
  std::string peer, source, synthetic, sink_dir, chunk, cca, buffer;
  std::uint64_t count = 1, seed = 0;
  unsigned streams = 0;
  bool discard = false, tls = false, dry_run = false;
};

void add_transfer_flags(CLI::App* c, TransferFlags& f) {
  c->add_option("--peer", f.peer, "Receiver HOST:PORT (or DMLAB_PEER, or config)");
  c->add_option("--sink-dir", f.sink_dir, "Subdirectory under the receiver's root");
  c->add_flag("--discard", f.discard, "Receiver verifies and drops the data");
  c->add_option("--streams", f.streams, "Parallel data connections (default from config)");
  c->add_option("--chunk", f.chunk, "Chunk size (default from config)");
  c->add_flag("--tls", f.tls, "Encrypt every connection");
  c->add_option("--cca", f.cca, "Congestion control algorithm (default: host default)");
  c->add_option("--buffer", f.buffer, "Fixed socket buffer and window clamp, e.g. 64KiB");
  c->add_flag("--dry-run", f.dry_run, "Show what would be sent without connecting");
}

mover::TransferSpec transfer_spec(Context& ctx, const TransferFlags& f, const std::string& command) {
  auto& cfg = ctx.config();
  mover::TransferSpec spec;
  spec.peer = f.peer.empty() ? cfg.require_peer(command) : endpoint_arg("--peer", f.peer);
  spec.sink = f.discard ? mover::SinkEndpoint::discard() : mover::SinkEndpoint::directory(f.sink_dir);
  spec.stream_count = static_cast<std::uint16_t>(f.streams ? f.streams : cfg.streams);
  spec.chunk_size = f.chunk.empty() ? cfg.chunk_size : bytes_arg("--chunk", f.chunk);
  spec.encryption = f.tls ? protocol::Encryption::tls : protocol::encryption_from_string(cfg.encryption);
  spec.cca = f.cca;
  if (!f.buffer.empty()) spec.socket_buffer = bytes_arg("--buffer", f.buffer);
  return spec;
}

void print_plan(std::ostream& out, const mover::TransferSpec& spec, const dataset::DatasetManifest& m) {
  std::vector<ByteCount> sizes;
  for (const auto& e : m.entries) sizes.push_back(e.size);
  auto plan = mover::schedule_lpt(sizes, spec.stream_count);
  out << "would send " << m.entries.size() << " files (" << m.total_bytes << " bytes) to " << spec.peer.str() << " over "
      << spec.stream_count << " streams, " << protocol::to_string(spec.encryption) << ", chunk "
      << format_bytes(spec.chunk_size) << "\n";
  for (std::size_t s = 0; s < plan.size(); ++s) out << "  stream " << s << ": " << plan[s].size() << " files\n";
}

void add_transfer(CLI::App& root, Context& ctx, Leaves& leaves) {
  auto o = std::make_shared<TransferFlags>();
  auto* c = root.add_subcommand("transfer", "Bulk transfer of a directory or synthetic dataset");
  auto* src = c->add_option("--source", o->source, "Directory to send");
  auto* syn = c->add_option("--synthetic", o->synthetic, "Send generated content of this file size instead");
  src->excludes(syn);
  c->add_option("--count", o->count, "Files in a synthetic source")->capture_default_str();
  c->add_option("--seed", o->seed, "Content seed of a synthetic source")->capture_default_str();
  add_transfer_flags(c, *o);
  leaves.emplace_back(c, [o, &ctx] {
    auto spec = transfer_spec(ctx, *o, "transfer");
    dataset::DatasetManifest manifest;
    if (!o->synthetic.empty()) {
      dataset::DatasetSpec ds;
      ds.file_size = bytes_arg("--synthetic", o->synthetic);
      ds.file_count = o->count;
      ds.content_seed = o->seed;
      ds.validate();
      spec.source = mover::SourceEndpoint::from_synthetic(ds);
      manifest = dataset::plan_dataset(ds);
    } else if (!o->source.empty()) {
      fs::path dir = fs::absolute(o->source);
      spec.source = mover::SourceEndpoint::from_directory(dir);
      manifest = manifest_for(dir, "");
    } else {
      throw UsageError("transfer needs --source DIR or --synthetic SIZE");
    }
    spec.validate();
    if (o->dry_run) {
      print_plan(ctx.out, spec, manifest);
      return kExitOk;
    }
    auto r = mover::transfer(spec, manifest);
    print_result(ctx.out, r);
    return r.ok() ? kExitOk : kExitFailure;
  });
}

void add_stream(CLI::App& root, Context& ctx, Leaves& leaves) {
  struct Stream : TransferFlags {
    std::string watch, quiescence = "2s", poll = "10ms";
  };
  auto o = std::make_shared<Stream>();
  auto* c = root.add_subcommand("stream", "Send files while a producer is still writing them");
  c->add_option("--watch", o->watch, "Directory the producer writes into")->required();
  c->add_option("--quiescence", o->quiescence, "Stop after this long without growth")->capture_default_str();
  c->add_option("--poll", o->poll, "Scan interval")->capture_default_str();
  add_transfer_flags(c, *o);
  leaves.emplace_back(c, [o, &ctx] {
    auto spec = transfer_spec(ctx, *o, "stream");
    spec.mode = protocol::SessionMode::streaming;
    fs::path watch = fs::absolute(o->watch);
    spec.source = mover::SourceEndpoint::from_directory(watch);
    auto quiet = std::chrono::duration_cast<std::chrono::milliseconds>(duration_arg("--quiescence", o->quiescence));
    mover::StreamingOptions so;
    so.poll_interval = std::chrono::duration_cast<std::chrono::milliseconds>(duration_arg("--poll", o->poll));
    spec.validate();
    if (o->dry_run) {
      ctx.out << "would stream files appearing under " << watch.string() << " to " << spec.peer.str() << " over "
              << spec.stream_count << " streams until " << mover::kCompletionMarker << " appears or "
              << format_duration(quiet) << " pass without growth\n";
      return kExitOk;
    }
    auto r = mover::transfer_streaming(spec, watch, quiet, so);
    print_result(ctx.out, r);
    return r.ok() ? kExitOk : kExitFailure;
  });
}

void add_stage(CLI::App& root, Context& ctx, Leaves& leaves) {
  struct Stage {
    std::string from, to, direction = "in", manifest;
    unsigned workers = 0;
    bool dry_run = false;
  };
  auto o = std::make_shared<Stage>();
  auto* c = root.add_subcommand("stage", "Copy a dataset between production storage and the burst buffer");
  c->add_option("--direction", o->direction, "in (production to burst buffer) or out")
      ->check(CLI::IsMember({"in", "out"}))
      ->capture_default_str();
  c->add_option("--from", o->from, "Source directory (default from config roots)");
  c->add_option("--to", o->to, "Destination directory (default from config roots)");
  c->add_option("--manifest", o->manifest, "Manifest to copy (default: <from>/.dmlab-manifest or a fresh index)");
  c->add_option("--workers", o->workers, "Copy threads (0: automatic)");
  c->add_flag("--dry-run", o->dry_run, "List what would be copied without copying");
  leaves.emplace_back(c, [o, &ctx] {
    auto& cfg = ctx.config();
    mover::StagingJob job;
    bool in = o->direction == "in";
    job.direction = in ? mover::StageDirection::stage_in : mover::StageDirection::stage_out;
    job.from = o->from.empty() ? (in ? cfg.production_root : cfg.burst_buffer_root) : fs::absolute(o->from);
    job.to = o->to.empty() ? (in ? cfg.burst_buffer_root : cfg.production_root) : fs::absolute(o->to);
    job.workers = o->workers;
    job.manifest = manifest_for(job.from, o->manifest);
    if (o->dry_run) {
      ctx.out << "would " << mover::to_string(job.direction) << " " << job.manifest.entries.size() << " files ("
              << job.manifest.total_bytes << " bytes) from " << job.from.string() << " to " << job.to.string()
              << "\n";
      return kExitOk;
    }
    auto r = mover::stage(job);
    print_result(ctx.out, r);
    return r.ok() ? kExitOk : kExitFailure;
  });
}

// ---- emu ----------------------------------------------------------------------

void add_emu(CLI::App& root, Context& ctx, Leaves& leaves) {
  auto* grp = root.add_subcommand("emu", "WAN latency emulation on the local test path");
  grp->require_subcommand(1);

  {
    struct Apply {
      std::string delay, jitter, rate, loss, interface, backend, state_file;
      bool dry_run = false;
    };
    auto o = std::make_shared<Apply>();
    auto* c = grp->add_subcommand("apply", "Apply a latency profile and hold it until interrupted");
    c->add_option("--delay", o->delay, "One-way delay; a round trip pays it twice")->required();
    c->add_option("--jitter", o->jitter, "Delay variation");
    c->add_option("--loss", o->loss, "Packet loss fraction in [0, 1]");
    c->add_option("--rate", o->rate, "Rate cap, e.g. 10Gbps");
    c->add_option("--interface", o->interface, "Interface for the tc backend (default from config)");
    c->add_option("--backend", o->backend, "auto, tc or delay-line (default from config)")
        ->check(CLI::IsMember({"auto", "tc", "delay-line"}));
    c->add_option("--state-file", o->state_file, "Where the applied profile is recorded");
    c->add_flag("--dry-run", o->dry_run, "Print the commands without changing anything");
    leaves.emplace_back(c, [o, &ctx] {
      auto& cfg = ctx.config();
      emulation::LatencyProfile p;
      p.one_way_delay = duration_arg("--delay", o->delay);
      if (!o->jitter.empty()) p.jitter = duration_arg("--jitter", o->jitter);
      if (!o->rate.empty()) p.rate_cap = bandwidth_arg("--rate", o->rate);
      if (!o->loss.empty()) p.loss = number_arg("--loss", o->loss);
      p.interface = o->interface.empty() ? cfg.emulation_interface : o->interface;
      p.validate();
      auto kind = emulation::backend_kind_from_string(o->backend.empty() ? cfg.emulation_backend : o->backend);
      fs::path state = o->state_file.empty() ? emulation::default_state_file() : fs::path(o->state_file);

      if (o->dry_run) {
        if (kind == emulation::BackendKind::delay_line) {
          emulation::DelayLineConfig dl;
          ctx.out << "would create TUN device " << dl.device << " (" << dl.local_address << "/16, peers at "
                  << dl.mirror_address << ") delaying each crossing by " << format_duration(p.one_way_delay)
                  << "\n";
          return kExitOk;
        }
        auto runner = CommandRunner::dry_run(ctx.out);
        emulation::TcBackend tc(runner, state);
        tc.preflight(p);
        tc.apply(p);
        return kExitOk;
      }

      SignalWait signals;
      CommandRunner runner;
      emulation::Emulator emu(emulation::make_backend(kind, runner, state));
      emu.preflight(p);
      auto handle = emu.apply(p);
      auto route = emu.route({"0.0.0.0", 5201});
      ctx.out << "applied " << p.describe() << " via " << emu.backend().name() << ", expected RTT "
              << format_duration(p.expected_rtt().round_trip()) << "\n"
              << "a receiver on 0.0.0.0:PORT is reached at " << route.host << ":PORT\n"
              << "holding until SIGINT or SIGTERM\n"
              << std::flush;
      while (!signals.wait(std::chrono::seconds(1))) {
      }
      handle.clear();
      ctx.out << "cleared\n";
      return kExitOk;
    });
  }
  {
    struct Clear {
      std::string state_file;
      bool dry_run = false;
    };
    auto o = std::make_shared<Clear>();
    auto* c = grp->add_subcommand("clear", "Remove an applied or orphaned latency profile");
    c->add_option("--state-file", o->state_file, "State file written by emu apply");
    c->add_flag("--dry-run", o->dry_run, "Print what would be undone without changing anything");
    leaves.emplace_back(c, [o, &ctx] {
      fs::path state = o->state_file.empty() ? emulation::default_state_file() : fs::path(o->state_file);
      auto rec = emulation::read_state(state);
      if (!rec) {
        ctx.out << "no emulation profile recorded in " << state.string() << "\n";
        return kExitOk;
      }
      ctx.out << "recorded: " << rec->backend << " " << rec->profile.describe() << " (pid " << rec->pid << ")\n";
      bool holder_alive = rec->pid > 0 && rec->pid != ::getpid() && ::kill(static_cast<pid_t>(rec->pid), 0) == 0;
      if (o->dry_run) {
        if (holder_alive) ctx.out << "would send SIGTERM to pid " << rec->pid << "\n";
        auto runner = CommandRunner::dry_run(ctx.out);
        emulation::recover(state, runner);
        return kExitOk;
      }
      if (holder_alive) {
        ::kill(static_cast<pid_t>(rec->pid), SIGTERM);
        for (int i = 0; i < 50 && fs::exists(state); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      }
      CommandRunner runner;
      emulation::recover(state, runner);
      ctx.out << "cleared\n";
      return kExitOk;
    });
  }
  {
    struct RttCmd {
      std::string peer, expect, allowance = "2ms";
      int samples = 10;
      double tolerance = 0.10;
    };
    auto o = std::make_shared<RttCmd>();
    auto* c = grp->add_subcommand("rtt", "Measure the round-trip time to a receiver");
    c->add_option("--peer", o->peer, "Receiver HOST:PORT (or DMLAB_PEER, or config)");
    c->add_option("--samples", o->samples, "Round trips to time")->capture_default_str()->check(CLI::PositiveNumber);
    c->add_option("--expect", o->expect, "Expected RTT; exit 1 when the median misses it");
    c->add_option("--tolerance", o->tolerance, "Relative tolerance")->capture_default_str();
    c->add_option("--allowance", o->allowance, "Absolute allowance")->capture_default_str();
    leaves.emplace_back(c, [o, &ctx] {
      auto peer = o->peer.empty() ? ctx.config().require_peer("emu rtt") : endpoint_arg("--peer", o->peer);
      Rtt expected = o->expect.empty() ? Rtt{} : rtt_arg("--expect", o->expect);
      auto v = emulation::measure_rtt(peer, o->samples, expected, o->tolerance, duration_arg("--allowance", o->allowance));
      ctx.out << "median RTT " << format_duration(v.measured_rtt.round_trip()) << " over " << v.samples.size()
              << " samples\n";
      if (o->expect.empty()) return kExitOk;
      ctx.out << "expected " << format_duration(v.expected_rtt.round_trip()) << ": " << (v.pass ? "pass" : "FAIL")
              << "\n";
      return v.pass ? kExitOk : kExitFailure;
    });
  }
}

// ---- tune ---------------------------------------------------------------------

struct TuneFlags {
  std::string sysctl_root, ring_interface, format = "table";
  bool dry_run = false, check = false;
};

void add_tune_flags(CLI::App* c, TuneFlags& f) {
  c->add_option("--sysctl-root", f.sysctl_root, "Kernel parameter tree (default from config, /proc/sys)");
  c->add_option("--ring-interface", f.ring_interface, "Also check NIC rings on this interface");
  c->add_option("--format", f.format, "table or jsonl")->check(CLI::IsMember({"table", "jsonl"}))->capture_default_str();
}

tuning::TuningTarget tune_target(Context& ctx, const TuneFlags& f) {
  auto target = ctx.config().tuning;
  if (!f.ring_interface.empty()) target.ring_interface = f.ring_interface;
  return target;
}

void add_tune(CLI::App& root, Context& ctx, Leaves& leaves) {
  auto* grp = root.add_subcommand("tune", "Host network tuning");
  grp->require_subcommand(1);

  {
    auto o = std::make_shared<TuneFlags>();
    auto* c = grp->add_subcommand("audit", "Compare the host against the tuning target");
    add_tune_flags(c, *o);
    c->add_flag("--check", o->check, "Exit 1 unless the host is fully tuned");
    leaves.emplace_back(c, [o, &ctx] {
      auto target = tune_target(ctx, *o);
      tuning::SysctlTree tree(o->sysctl_root.empty() ? ctx.config().sysctl_root : fs::path(o->sysctl_root));
      CommandRunner runner;
      auto report = tuning::audit(target, tree, runner);
      ctx.out << (o->format == "jsonl" ? tuning::render_jsonl(report) : tuning::render_table(report));
      return o->check && report.overall != tuning::Overall::tuned ? kExitFailure : kExitOk;
    });
  }
  {
    auto o = std::make_shared<TuneFlags>();
    auto* c = grp->add_subcommand("apply", "Write the tuning target to the running kernel");
    add_tune_flags(c, *o);
    c->add_flag("--dry-run", o->dry_run, "Print the commands without changing anything");
    leaves.emplace_back(c, [o, &ctx] {
      auto target = tune_target(ctx, *o);
      tuning::SysctlTree tree(o->sysctl_root.empty() ? ctx.config().sysctl_root : fs::path(o->sysctl_root));
      if (o->dry_run) {
        auto runner = CommandRunner::dry_run(ctx.out);
        tuning::apply(target, tuning::Scope::dry_run, tree, runner, ctx.out);
        return kExitOk;
      }
      CommandRunner runner;
      tuning::AuditReport report;
      try {
        report = tuning::apply(target, tuning::Scope::runtime, tree, runner, ctx.out);
      } catch (const tuning::PermissionError& e) {
        ctx.err << "dmlab: " << e.what() << "\n";
        return kExitFailure;
      }
      ctx.out << (o->format == "jsonl" ? tuning::render_jsonl(report) : tuning::render_table(report));
      if (report.overall == tuning::Overall::tuned) return kExitOk;
      ctx.err << "dmlab: host is " << tuning::to_string(report.overall) << " after apply\n";
      return kExitFailure;
    });
  }
}

// ---- sweep --------------------------------------------------------------------

void add_sweep(CLI::App& root, Context& ctx, Leaves& leaves) {
  auto* grp = root.add_subcommand("sweep", "Experiment matrix");
  grp->require_subcommand(1);

  struct Run {
    std::string log, series, min, max = "64MiB", budget = "256MiB", peer, backend, chunk, sink = "discard";
    std::vector<std::string> latencies, ccas{"cubic"}, modes{"bulk"};
    unsigned iterations = 3, streams = 0;
    std::uint64_t seed = 0x5eed;
    bool regenerate = false, dry_run = false, tls = false;
  };
  auto o = std::make_shared<Run>();
  auto* c = grp->add_subcommand("run", "Run (or resume) a latency x CCA x mode x size sweep");
  c->add_option("--log", o->log, "Record log (default: <output_dir>/sweep-records.jsonl)");
  c->add_option("--latencies", o->latencies, "One-way delays (default from config)")->delimiter(',');
  c->add_option("--ccas", o->ccas, "Congestion control algorithms")->delimiter(',')->capture_default_str();
  c->add_option("--modes", o->modes, "bulk and/or streaming")
      ->delimiter(',')
      ->check(CLI::IsMember({"bulk", "streaming"}))
      ->capture_default_str();
  c->add_option("--series", o->series, "Size series: bulk or streaming (default follows --modes)")
      ->check(CLI::IsMember({"bulk", "streaming"}));
  c->add_option("--min", o->min, "Smallest file size (default: 1KiB bulk, 4MiB streaming)");
  c->add_option("--max", o->max, "Largest file size")->capture_default_str();
  c->add_option("--budget", o->budget, "Aggregate bytes per size")->capture_default_str();
  c->add_option("--iterations", o->iterations, "Passes per block")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--streams", o->streams, "Parallel data connections (default from config)");
  c->add_option("--chunk", o->chunk, "Chunk size (default from config)");
  c->add_flag("--tls", o->tls, "Encrypt every connection");
  c->add_option("--sink", o->sink, "discard or directory")->check(CLI::IsMember({"discard", "directory"}))->capture_default_str();
  c->add_option("--peer", o->peer, "Remote receiver; without one a local receiver is started");
  c->add_option("--backend", o->backend, "Emulation backend: auto, tc or delay-line")
      ->check(CLI::IsMember({"auto", "tc", "delay-line"}));
  c->add_option("--seed", o->seed, "Dataset content seed");
  c->add_flag("--regenerate", o->regenerate, "Fresh dataset for every iteration");
  c->add_flag("--dry-run", o->dry_run, "List the cells that would run without running them");
  leaves.emplace_back(c, [o, &ctx] {
    auto& cfg = ctx.config();
    std::vector<protocol::SessionMode> modes;
    for (const auto& m : o->modes) modes.push_back(protocol::session_mode_from_string(m));
    bool only_streaming = std::all_of(modes.begin(), modes.end(), [](auto m) { return m == protocol::SessionMode::streaming; });
    auto kind = o->series.empty() ? (only_streaming ? dataset::SeriesKind::streaming : dataset::SeriesKind::bulk)
                                  : dataset::series_kind_from_string(o->series);

    sweep::SweepPlan plan;
    auto min = o->min.empty() ? (kind == dataset::SeriesKind::bulk ? KiB : 4 * MiB) : bytes_arg("--min", o->min);
    dataset::SeriesOptions so;
    so.root_base = cfg.dataset_root;
    so.seed = o->seed;
    plan.series = dataset::build_sweep_series(kind, min, bytes_arg("--max", o->max), bytes_arg("--budget", o->budget), so);
    std::vector<microseconds> lats = cfg.latencies;
    if (!o->latencies.empty()) {
      lats.clear();
      for (const auto& l : o->latencies) lats.push_back(duration_arg("--latencies", l));
    }
    for (auto l : lats) {
      emulation::LatencyProfile p;
      p.one_way_delay = l;
      p.interface = cfg.emulation_interface;
      plan.latencies.push_back(p);
    }
    plan.ccas = o->ccas;
    plan.modes = modes;
    plan.iterations = o->iterations;
    plan.regenerate_per_iteration = o->regenerate;
    auto& t = plan.transfer_template;
    t.stream_count = static_cast<std::uint16_t>(o->streams ? o->streams : cfg.streams);
    t.chunk_size = o->chunk.empty() ? cfg.chunk_size : bytes_arg("--chunk", o->chunk);
    t.encryption = o->tls ? protocol::Encryption::tls : protocol::encryption_from_string(cfg.encryption);
    t.sink = o->sink == "discard" ? mover::SinkEndpoint::discard() : mover::SinkEndpoint::directory("sweep");
    plan.validate();

    fs::path log_path = o->log.empty() ? cfg.output_dir / "sweep-records.jsonl" : fs::absolute(o->log);
    auto cells = sweep::plan_cells(plan);

    if (o->dry_run) {
      std::set<sweep::CellKey> done;
      if (fs::exists(log_path))
        for (const auto& r : sweep::read_records(log_path)) done.insert(r.cell);
      std::size_t pending = 0;
      for (const auto& k : cells) {
        bool recorded = done.count(k) > 0;
        pending += !recorded;
        ctx.out << (recorded ? "done " : "run  ") << format_duration(k.latency) << ' ' << k.cca << ' '
                << protocol::to_string(k.mode) << " iter " << k.iteration << ' ' << format_bytes(k.size) << "\n";
      }
      ctx.out << cells.size() << " cells, " << pending << " to run, loop order " << sweep::kLoopOrder << "\n";
      return kExitOk;
    }

    auto backend_kind = emulation::backend_kind_from_string(o->backend.empty() ? cfg.emulation_backend : o->backend);
    CommandRunner runner;
    emulation::Emulator emu(emulation::make_backend(backend_kind, runner, emulation::default_state_file()));

    std::optional<mover::Receiver> local;
    sweep::LabOptions lo;
    lo.dataset_root = cfg.dataset_root;
    lo.sysctl_root = cfg.sysctl_root;
    std::optional<net::Endpoint> remote;
    if (!o->peer.empty())
      remote = endpoint_arg("--peer", o->peer);
    else
      remote = cfg.peer;
    if (remote) {
      lo.receiver = *remote;
      if (emu.backend().name() == "delay-line") {
        lo.route_through_emulator = false;
        ctx.err << "dmlab: warning: the delay line only shapes local paths; traffic to " << remote->str()
                << " is not delayed\n";
      }
    } else {
      mover::ServeConfig sc;
      sc.root = cfg.receiver_root;
      fs::create_directories(sc.root);
      local.emplace(mover::serve({"0.0.0.0", 0}, sc));
      lo.receiver = {"127.0.0.1", local->port()};
    }

    if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());
    sweep::RecordLog log(log_path);
    sweep::LabEnvironment env(emu, lo);
    sweep::RunOptions ro;
    ro.on_record = [&ctx](const sweep::SweepRecord& r) {
      const auto& k = r.cell;
      ctx.out << format_duration(k.latency) << ' ' << k.cca << ' ' << protocol::to_string(k.mode) << " iter "
              << k.iteration << ' ' << format_bytes(k.size) << ": ";
      if (r.status == sweep::CellStatus::ok)
        ctx.out << fixed0(r.throughput_bps) << " bps, " << mover::to_string(r.integrity) << "\n";
      else
        ctx.out << "failed: " << r.error << "\n";
      ctx.out << std::flush;
    };
    auto records = sweep::run_sweep(plan, env, log, ro);
    auto failed = std::count_if(records.begin(), records.end(),
                                [](const auto& r) { return r.status == sweep::CellStatus::failed; });
    ctx.out << records.size() << " records in " << log_path.string() << " (" << failed << " failed)\n";
    return kExitOk;
  });
}

// ---- report -------------------------------------------------------------------

void add_report(CLI::App& root, Context& ctx, Leaves& leaves) {
  auto* grp = root.add_subcommand("report", "Statistics and plots from a record log");
  grp->require_subcommand(1);

  struct Flags {
    std::string log, out;
  };
  auto log_of = [&ctx](const Flags& f) {
    return f.log.empty() ? ctx.config().output_dir / "sweep-records.jsonl" : fs::absolute(f.log);
  };
  auto out_of = [&ctx](const Flags& f) { return f.out.empty() ? ctx.config().output_dir : fs::absolute(f.out); };
  auto add = [&](const char* name, const char* help, bool has_out) {
    auto o = std::make_shared<Flags>();
    auto* c = grp->add_subcommand(name, help);
    c->add_option("--log", o->log, "Record log (default: <output_dir>/sweep-records.jsonl)");
    if (has_out) c->add_option("--out", o->out, "Output directory (default from config)");
    return std::make_pair(c, o);
  };

  {
    auto [c, o] = add("stats", "Print per-cell mean, median and standard deviation", false);
    leaves.emplace_back(c, [o = o, &ctx, log_of] {
      auto agg = report::aggregate_with_exclusions(sweep::read_records(log_of(*o)));
      ctx.out << report::stats_table(agg.stats);
      if (!agg.exclusions.empty()) ctx.err << "dmlab: " << agg.exclusions.size() << " failed records excluded\n";
      return kExitOk;
    });
  }
  {
    auto [c, o] = add("plots", "Write per-curve data files and a gnuplot script", true);
    leaves.emplace_back(c, [o = o, &ctx, log_of, out_of] {
      auto stats = report::aggregate(sweep::read_records(log_of(*o)));
      auto bundle = report::emit_plots(stats, out_of(*o));
      for (const auto& f : bundle.data_files) ctx.out << f.string() << "\n";
      ctx.out << bundle.command_file.string() << "\n" << bundle.summary_table.string() << "\n";
      return kExitOk;
    });
  }
  {
    auto [c, o] = add("tables", "Write stats, exclusions and metadata tables", true);
    leaves.emplace_back(c, [o = o, &ctx, log_of, out_of] {
      auto agg = report::aggregate_with_exclusions(sweep::read_records(log_of(*o)));
      for (const auto& f : report::emit_tables(agg.stats, out_of(*o), agg.exclusions)) ctx.out << f.string() << "\n";
      return kExitOk;
    });
  }
}

// ---- assembly -----------------------------------------------------------------

std::string path_of(const CLI::App* app) {
  std::string p;
  for (; app && app->get_parent(); app = app->get_parent()) p = app->get_name() + (p.empty() ? "" : " " + p);
  return p;
}

std::unique_ptr<CLI::App> build(Context& ctx, Leaves& leaves, std::string& config_path) {
  auto app = std::make_unique<CLI::App>("Data-mover lab: size paths, generate datasets, move data over emulated WAN "
                                        "latency, tune hosts, run sweeps and report results.",
                                        "dmlab");
  app->require_subcommand(1);
  app->set_version_flag("--version", kVersion);
  app->add_option("--config", config_path, "Lab configuration file (YAML)");
  add_calc(*app, ctx, leaves);
  add_dataset(*app, ctx, leaves);
  add_serve(*app, ctx, leaves);
  add_transfer(*app, ctx, leaves);
  add_stream(*app, ctx, leaves);
  add_stage(*app, ctx, leaves);
  add_emu(*app, ctx, leaves);
  add_tune(*app, ctx, leaves);
  add_sweep(*app, ctx, leaves);
  add_report(*app, ctx, leaves);

  std::ostringstream footer;
  footer << "Commands:\n";
  for (const auto& [sub, action] : leaves) footer << "  dmlab " << path_of(sub) << "\n";
  footer << "\nQuantities need explicit units (KiB, MiB, GB, Gbps, ms).\n"
         << "Environment: DMLAB_PEER and DMLAB_OUTPUT_DIR override the config file.\n"
         << "Exit status: 0 success, 1 operational failure, 2 usage error.";
  app->footer(footer.str());
  return app;
}

const CLI::App* deepest(const CLI::App* app) {
  while (!app->get_subcommands().empty()) app = app->get_subcommands().front();
  return app;
}

std::string help_for(const CLI::App* app) {
  if (!app->get_parent()) return app->help();
  auto parent = path_of(app->get_parent());
  return app->help(parent.empty() ? "dmlab" : "dmlab " + parent);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Context ctx{out, err, {}, std::nullopt};
  Leaves leaves;
  auto app = build(ctx, leaves, ctx.config_path);

  if (args.empty()) {
    err << app->help();
    return kExitUsage;
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app->parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << help_for(deepest(app.get()));
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app->help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    const auto* where = deepest(app.get());
    err << "dmlab: " << e.what() << "\n\n" << help_for(where);
    return kExitUsage;
  }

  for (const auto& [sub, action] : leaves) {
    if (!sub->parsed()) continue;
    try {
      return action();
    } catch (const UsageError& e) {
      err << "dmlab: " << e.what() << "\nRun 'dmlab " << path_of(sub) << " --help' for usage.\n";
      return kExitUsage;
    } catch (const std::exception& e) {
      err << "dmlab: error: " << e.what() << "\n";
      return kExitFailure;
    }
  }
  err << app->help();
  return kExitUsage;
}

int dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv + std::min(argc, 1), argv + argc);
  return run(args, std::cout, std::cerr);
}

std::string usage() {
  std::ostringstream sink;
  Context ctx{sink, sink, {}, std::nullopt};
  Leaves leaves;
  std::string config_path;
  return build(ctx, leaves, config_path)->help();
}

std::vector<std::string> command_paths() {
  std::ostringstream sink;
  Context ctx{sink, sink, {}, std::nullopt};
  Leaves leaves;
  std::string config_path;
  auto app = build(ctx, leaves, config_path);
  std::vector<std::string> paths;
  for (const auto& [sub, action] : leaves) paths.push_back(path_of(sub));
  return paths;
}

}  // namespace dmlab::cli
