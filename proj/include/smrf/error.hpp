/*
* smrf - myocardial segmentation with shape model guided random forests.
*
* Copyright 2026 The smrf authors.
*
* Licensed under the Apache License, Version 2.0 (the "License");
* you may not use this file except in compliance with the License.
* You may obtain a copy of the License at
*
*     http://www.apache.org/licenses/LICENSE-2.0
*
* Unless required by applicable law or agreed to in writing, software
* distributed under the License is distributed on an "AS IS" BASIS,
* WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
* See the License for the specific language governing permissions and
* limitations under the License.
*/

#pragma once

#include <stdexcept>
#include <string>

namespace smrf {

/// Bad or inconsistent input data (files, dimensions, payloads).
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed serialized payload; the message carries the node path where
/// parsing stopped.
class ParseError : public DataError {
public:
    explicit ParseError(const std::string& what) : DataError(what) {}
};

/// Numerical failure (non-finite objective, degenerate decomposition, ...).
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace smrf
