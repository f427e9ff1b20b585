// Copyright 2026 The Forge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace forge {

// Base error for all failures raised by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Tensor shape / rank mismatches. The message always names the operation
// and the offending shapes.
struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(what) {}
};

// Config file problems. `path` is the dotted field path (e.g. "encoder.hidden").
struct ConfigError : Error {
  std::string path;
  ConfigError(std::string field_path, const std::string& what)
      : Error(field_path.empty() ? what : field_path + ": " + what),
        path(std::move(field_path)) {}
};

// Failures surfaced by external-service client interfaces (captioner,
// detector, OCR). `timeout` distinguishes deadline expiry from hard errors.
struct ClientError : Error {
  bool timeout;
  explicit ClientError(const std::string& what, bool is_timeout = false)
      : Error(what), timeout(is_timeout) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <typename Head, typename... Tail>
void format_into(std::ostringstream& os, Head&& head, Tail&&... tail) {
  os << head;
  format_into(os, std::forward<Tail>(tail)...);
}
}  // namespace detail

template <typename... Args>
std::string format_msg(Args&&... args) {
  std::ostringstream os;
  detail::format_into(os, std::forward<Args>(args)...);
  return os.str();
}

}  // namespace forge

// Always-on invariant checks (independent of NDEBUG).
#define FORGE_CHECK(cond, ...)                                \
  do {                                                        \
    if (!(cond)) throw ::forge::Error(::forge::format_msg(__VA_ARGS__)); \
  } while (0)

#define FORGE_SHAPE_CHECK(cond, ...)                               \
  do {                                                             \
    if (!(cond)) throw ::forge::ShapeError(::forge::format_msg(__VA_ARGS__)); \
  } while (0)
