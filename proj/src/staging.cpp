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

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <mutex>

#include "dmlab/mover.hpp"
#include "dmlab/parallel.hpp"

namespace dmlab::mover {

namespace {

constexpr std::size_t kCopyBlock = 4 * MiB;

struct Fd {
  int fd = -1;
  ~Fd() {
    if (fd >= 0) ::close(fd);
  }
};

std::string errno_text(const std::string& what) { return what + ": " + std::strerror(errno); }

/// Copies src to dst via dst.part, returning the digest of the bytes read.
Digest copy_file(const fs::path& src, const fs::path& dst, std::vector<std::byte>& buf) {
  Fd in{::open(src.c_str(), O_RDONLY | O_CLOEXEC)};
  if (in.fd < 0) throw TransferError(errno_text("open " + src.string()));
  fs::create_directories(dst.parent_path());
  auto part = dst;
  part += ".part";
  Fd out{::open(part.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644)};
  if (out.fd < 0) throw TransferError(errno_text("create " + part.string()));
  Sha256 hash;
  try {
    for (;;) {
      ssize_t n = ::read(in.fd, buf.data(), buf.size());
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransferError(errno_text("read " + src.string()));
      }
      if (n == 0) break;
      auto block = std::span<const std::byte>(buf.data(), static_cast<std::size_t>(n));
      hash.update(block);
      while (!block.empty()) {
        ssize_t w = ::write(out.fd, block.data(), block.size());
        if (w < 0) {
          if (errno == EINTR) continue;
          throw TransferError(errno_text("write " + part.string()));
        }
        block = block.subspan(static_cast<std::size_t>(w));
      }
    }
    if (::close(out.fd) != 0) {
      out.fd = -1;
      throw TransferError(errno_text("close " + part.string()));
    }
    out.fd = -1;
    fs::rename(part, dst);
  } catch (...) {
    std::error_code ec;
    fs::remove(part, ec);
    throw;
  }
  return hash.finish();
}

}  // namespace

std::string to_string(StageDirection d) { return d == StageDirection::stage_in ? "stage-in" : "stage-out"; }

TransferResult stage(const StagingJob& job) {
  std::error_code ec;
  if (job.from.empty() || job.to.empty()) throw TransferError("staging needs both a source and a destination");
  if (fs::exists(job.to, ec) && fs::equivalent(job.from, job.to, ec))
    throw TransferError("staging source and destination are the same directory");
  if (fs::weakly_canonical(job.from, ec) == fs::weakly_canonical(job.to, ec))
    throw TransferError("staging source and destination are the same directory");
  if (!fs::is_directory(job.from, ec)) throw TransferError("staging source does not exist: " + job.from.string());
  fs::create_directories(job.to);

  const auto& entries = job.manifest.entries;
  const unsigned workers = default_workers(job.workers);
  TransferResult result;
  result.per_stream_bytes.assign(workers, 0);
  std::mutex mu;

  std::vector<std::vector<std::byte>> buffers(workers);
  auto start = std::chrono::steady_clock::now();

  parallel_for(entries.size(), workers, [&](std::size_t i, unsigned worker) {
    auto& buf = buffers[worker];
    if (buf.empty()) buf.resize(kCopyBlock);
    const auto& e = entries[i];
    const auto src = job.from / e.relative_path;
    const auto dst = job.to / e.relative_path;

    std::error_code dec;
    if (e.digest && fs::file_size(dst, dec) == e.size && !dec && sha256_file(dst) == *e.digest) {
      std::lock_guard lk(mu);
      ++result.files_ok;
      return;
    }

    std::string failure;
    ByteCount copied = 0;
    try {
      auto got = copy_file(src, dst, buf);
      copied = fs::file_size(dst);
      if (copied != e.size) {
        failure = "size " + std::to_string(copied) + " differs from manifest " + std::to_string(e.size);
      } else if (e.digest && got != *e.digest) {
        failure = "source digest differs from manifest";
      } else if (sha256_file(dst) != got) {
        failure = "destination digest differs after copy";
      }
      if (!failure.empty()) fs::remove(dst, dec);
    } catch (const std::exception& ex) {
      failure = ex.what();
    }
    std::lock_guard lk(mu);
    if (failure.empty()) {
      ++result.files_ok;
      result.bytes_moved += copied;
      result.per_stream_bytes[worker] += copied;
    } else {
      result.failures.push_back({e.relative_path, failure});
    }
  });

  result.wall_time = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - start);
  result.files_failed = result.failures.size();
  result.throughput_bps = throughput_bps(result.bytes_moved, result.wall_time);
  result.integrity = result.files_failed ? Integrity::failed : Integrity::verified;
  return result;
}

}  // namespace dmlab::mover
