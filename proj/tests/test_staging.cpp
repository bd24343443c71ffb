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

#include <doctest.h>

#include "dmlab/mover.hpp"
#include "support.hpp"

using namespace dmlab;
using namespace dmlab::mover;
using dmlab::testing::TempDir;

namespace {

dataset::DatasetManifest make_source(const fs::path& root, ByteCount size, std::uint64_t count) {
  dataset::DatasetSpec ds;
  ds.file_size = size;
  ds.file_count = count;
  ds.root_path = root;
  ds.content_seed = 77;
  return dataset::generate_dataset(ds);
}

}  // namespace

TEST_CASE("stage in and back out preserves every digest") {
  TempDir tmp("stage");
  auto m = make_source(tmp / "prod", 256 * KiB, 12);
  StagingJob in{tmp / "prod", tmp / "bb", m, StageDirection::stage_in, 3};
  auto r = stage(in);
  CHECK(r.ok());
  CHECK(r.bytes_moved == m.total_bytes);
  CHECK(r.files_ok == 12);
  CHECK(r.throughput_bps > 0);
  CHECK(r.integrity == Integrity::verified);
  CHECK(dataset::verify_dataset(m, tmp / "bb").intact());

  StagingJob out{tmp / "bb", tmp / "prod2", m, StageDirection::stage_out, 2};
  auto r2 = stage(out);
  CHECK(r2.ok());
  CHECK(dataset::verify_dataset(m, tmp / "prod2").intact());
}

TEST_CASE("1 GiB staged counts every byte") {
  TempDir tmp("stage");
  auto m = make_source(tmp / "prod", 64 * MiB, 16);
  auto r = stage({tmp / "prod", tmp / "bb", m, StageDirection::stage_in, 0});
  CHECK(r.bytes_moved == GiB);
  CHECK(r.ok());
}

TEST_CASE("a rerun copies only what is missing or wrong") {
  TempDir tmp("stage");
  auto m = make_source(tmp / "prod", 64 * KiB, 8);
  StagingJob job{tmp / "prod", tmp / "bb", m, StageDirection::stage_in, 2};
  REQUIRE(stage(job).ok());
  fs::remove(tmp / "bb" / m.entries[2].relative_path);
  testing::spit(tmp / "bb" / m.entries[5].relative_path, "stale");
  auto r = stage(job);
  CHECK(r.ok());
  CHECK(r.bytes_moved == 2 * 64 * KiB);
  CHECK(r.files_ok == 8);
  CHECK(dataset::verify_dataset(m, tmp / "bb").intact());
}

TEST_CASE("missing sources fail individually") {
  TempDir tmp("stage");
  auto m = make_source(tmp / "prod", 64 * KiB, 4);
  fs::remove(tmp / "prod" / m.entries[1].relative_path);
  auto r = stage({tmp / "prod", tmp / "bb", m, StageDirection::stage_in, 1});
  CHECK_FALSE(r.ok());
  CHECK(r.files_failed == 1);
  CHECK(r.files_ok == 3);
}

TEST_CASE("source and destination must differ") {
  TempDir tmp("stage");
  auto m = make_source(tmp / "prod", 4 * KiB, 1);
  CHECK_THROWS_AS(stage({tmp / "prod", tmp / "prod" / ".", m, StageDirection::stage_in, 1}), TransferError);
}
