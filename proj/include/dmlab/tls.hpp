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

#pragma once

#include <cstddef>
#include <span>
#include <string>

namespace dmlab::net {

// Lab TLS with a fixed bundled certificate (share/certs). The client
// trusts exactly that certificate; this is for benchmark labs only.
class TlsSession {
 public:
  enum class Role { client, server };

  TlsSession(int fd, Role role);
  ~TlsSession();
  TlsSession(const TlsSession&) = delete;
  TlsSession& operator=(const TlsSession&) = delete;

  /// Returns bytes read, 0 on orderly close.
  std::size_t read(std::span<std::byte> out);
  std::size_t write(std::span<const std::byte> data);
  std::string cipher() const;

 private:
  void* ssl_ = nullptr;
};

const std::string& lab_certificate_pem();

}  // namespace dmlab::net
