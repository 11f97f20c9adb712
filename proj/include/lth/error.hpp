// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace lth {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape or size disagreement between operands.
class DimensionError : public Error { using Error::Error; };
// A scalar argument outside its admissible range.
class ParameterError : public Error { using Error::Error; };
class IndexError : public Error { using Error::Error; };
// Caller violated an API precondition (call order, missing state).
class ContractError : public Error { using Error::Error; };
class BuildError : public Error { using Error::Error; };
class LoadError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class IngestionError : public Error { using Error::Error; };
class SamplerError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
// An internal invariant was observed broken; indicates a bug, not bad input.
class InvariantError : public Error { using Error::Error; };
class MetricError : public Error { using Error::Error; };

}  // namespace lth
