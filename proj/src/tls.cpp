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

#include "dmlab/tls.hpp"

#include <openssl/err.h>
#include <openssl/pem.h>
#include <openssl/ssl.h>
#include <openssl/x509.h>

#include <cerrno>
#include <cstring>
#include <mutex>

#include "dmlab/net.hpp"

#include "lab_certs.inc"

namespace dmlab::net {

namespace {

std::string openssl_error(const std::string& what) {
  std::string msg = what;
  while (unsigned long e = ERR_get_error()) {
    char buf[256];
    ERR_error_string_n(e, buf, sizeof buf);
    msg += ": ";
    msg += buf;
  }
  return msg;
}

struct Contexts {
  SSL_CTX* server = nullptr;
  SSL_CTX* client = nullptr;
};

Contexts& contexts() {
  static Contexts ctx;
  static std::once_flag once;
  std::call_once(once, [] {
    BIO* cert_bio = BIO_new_mem_buf(kLabCertPem, -1);
    BIO* key_bio = BIO_new_mem_buf(kLabKeyPem, -1);
    X509* cert = PEM_read_bio_X509(cert_bio, nullptr, nullptr, nullptr);
    EVP_PKEY* key = PEM_read_bio_PrivateKey(key_bio, nullptr, nullptr, nullptr);
    BIO_free(cert_bio);
    BIO_free(key_bio);
    if (!cert || !key) throw NetError(openssl_error("bundled lab certificate is unreadable"));

    ctx.server = SSL_CTX_new(TLS_server_method());
    SSL_CTX_set_min_proto_version(ctx.server, TLS1_2_VERSION);
    if (SSL_CTX_use_certificate(ctx.server, cert) != 1 || SSL_CTX_use_PrivateKey(ctx.server, key) != 1)
      throw NetError(openssl_error("loading lab certificate"));

    ctx.client = SSL_CTX_new(TLS_client_method());
    SSL_CTX_set_min_proto_version(ctx.client, TLS1_2_VERSION);
    X509_STORE_add_cert(SSL_CTX_get_cert_store(ctx.client), cert);
    SSL_CTX_set_verify(ctx.client, SSL_VERIFY_PEER, nullptr);

    X509_free(cert);
    EVP_PKEY_free(key);
  });
  return ctx;
}

}  // namespace

const std::string& lab_certificate_pem() {
  static const std::string pem(kLabCertPem);
  return pem;
}

TlsSession::TlsSession(int fd, Role role) {
  auto& ctx = contexts();
  SSL* ssl = SSL_new(role == Role::server ? ctx.server : ctx.client);
  if (!ssl) throw NetError(openssl_error("SSL_new"));
  ssl_ = ssl;
  SSL_set_fd(ssl, fd);
  int rc = role == Role::server ? SSL_accept(ssl) : SSL_connect(ssl);
  if (rc != 1) {
    auto msg = openssl_error("TLS handshake failed");
    SSL_free(ssl);
    ssl_ = nullptr;
    throw ConnectionLost(msg);
  }
}

TlsSession::~TlsSession() {
  if (ssl_) {
    auto* ssl = static_cast<SSL*>(ssl_);
    SSL_shutdown(ssl);
    SSL_free(ssl);
  }
}

std::size_t TlsSession::read(std::span<std::byte> out) {
  auto* ssl = static_cast<SSL*>(ssl_);
  for (;;) {
    size_t got = 0;
    if (SSL_read_ex(ssl, out.data(), out.size(), &got) == 1) return got;
    switch (SSL_get_error(ssl, 0)) {
      case SSL_ERROR_ZERO_RETURN: return 0;
      case SSL_ERROR_WANT_READ:
      case SSL_ERROR_WANT_WRITE: continue;
      case SSL_ERROR_SYSCALL:
        if (errno == EINTR) continue;
        if (errno == 0) return 0;
        throw ConnectionLost(std::string("TLS read: ") + std::strerror(errno));
      default: throw ConnectionLost(openssl_error("TLS read"));
    }
  }
}

std::size_t TlsSession::write(std::span<const std::byte> data) {
  auto* ssl = static_cast<SSL*>(ssl_);
  for (;;) {
    size_t put = 0;
    if (SSL_write_ex(ssl, data.data(), data.size(), &put) == 1) return put;
    switch (SSL_get_error(ssl, 0)) {
      case SSL_ERROR_WANT_READ:
      case SSL_ERROR_WANT_WRITE: continue;
      case SSL_ERROR_SYSCALL:
        if (errno == EINTR) continue;
        throw ConnectionLost(std::string("TLS write: ") + std::strerror(errno));
      default: throw ConnectionLost(openssl_error("TLS write"));
    }
  }
}

std::string TlsSession::cipher() const { return SSL_get_cipher_name(static_cast<SSL*>(ssl_)); }

}  // namespace dmlab::net
