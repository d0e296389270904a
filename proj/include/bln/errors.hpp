#pragma once

#include <stdexcept>
#include <string>

namespace bln {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error { using Error::Error; };          // dimension mismatch
struct DomainError : Error { using Error::Error; };         // log(<=0), division by zero
struct IndexError : Error { using Error::Error; };          // label out of range
struct ContractError : Error { using Error::Error; };       // API misuse (non-scalar loss, ...)
struct ConfigError : Error { using Error::Error; };         // bad config value
struct DegenerateError : Error { using Error::Error; };     // sigma/sample below floor
struct CheckpointError : Error { using Error::Error; };     // malformed checkpoint
struct IngestError : Error { using Error::Error; };         // bad data file
struct InsufficientBatchError : Error { using Error::Error; };  // BN/BRN at batch size 1

}  // namespace bln
