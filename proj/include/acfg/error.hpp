// Copyright 2026 The acfg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace acfg
{
/// Root of every exception thrown by the library.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Malformed data handed to an operation (shape mismatch, NaN logits, ...).
class InvalidInput : public Error
{
public:
    using Error::Error;
};

/// A configuration value outside its legal range.
class InvalidConfig : public Error
{
public:
    using Error::Error;
};

/// Transport-level failure talking to a remote backend. Retrying may help.
class TransportError : public Error
{
public:
    using Error::Error;
};

/// The remote peer answered, but not in a way the wire protocol allows.
class ProtocolError : public Error
{
public:
    using Error::Error;
};

class IoError : public Error
{
public:
    using Error::Error;
};

namespace detail
{
/// Shortens a payload for inclusion in an error message.
inline std::string excerpt(const std::string& payload, std::size_t max_len = 120)
{
    if (payload.size() <= max_len) return payload;
    return payload.substr(0, max_len) + "...";
}
}  // namespace detail

}  // namespace acfg
