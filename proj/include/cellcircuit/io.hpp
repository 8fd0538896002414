// Copyright 2026 The cellcircuit Authors
// SPDX-License-Identifier: Apache-2.0
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

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace cellcircuit {

std::string ReadFile(const std::string& path);
void WriteFile(const std::string& path, std::string_view contents);
bool FileExists(const std::string& path);
void MakeDirs(const std::string& path);

std::vector<std::string> SplitLines(std::string_view text);
std::vector<std::string> Split(std::string_view text, char sep);
std::string_view Trim(std::string_view s);

// Shortest decimal form that parses back to the same double.
std::string FormatDouble(double v);
// Throws kParse with `where` in the message when `s` is not a number.
double ParseDouble(std::string_view s, const std::string& where);
long long ParseInt(std::string_view s, const std::string& where);
uint64_t ParseUint64(std::string_view s, const std::string& where);

// Escapes backslash, tab, newline, carriage return and non-printable bytes
// as \\, \t, \n, \r and \xHH so the result is a single tab-free line.
std::string EscapeBytes(std::string_view bytes);
std::string UnescapeBytes(std::string_view text, const std::string& where);

}  // namespace cellcircuit
