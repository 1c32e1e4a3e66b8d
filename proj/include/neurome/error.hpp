#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace neurome {

/// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define NEUROME_DEFINE_ERROR(Name)                                                        \
    class Name : public Error {                                                           \
    public:                                                                               \
        explicit Name(const std::string& what) : Error(std::string(#Name ": ") + what) {} \
    }

NEUROME_DEFINE_ERROR(InvalidSpec);
NEUROME_DEFINE_ERROR(ShapeMismatch);
NEUROME_DEFINE_ERROR(SpecMismatch);
NEUROME_DEFINE_ERROR(DegenerateData);
NEUROME_DEFINE_ERROR(UnsupportedMagic);
NEUROME_DEFINE_ERROR(PopulationTooSmall);
NEUROME_DEFINE_ERROR(NonFinite);
NEUROME_DEFINE_ERROR(EmptyDataset);
NEUROME_DEFINE_ERROR(InvalidTransform);
NEUROME_DEFINE_ERROR(ZeroColumn);
NEUROME_DEFINE_ERROR(InvalidArgument);
NEUROME_DEFINE_ERROR(ConfigError);
NEUROME_DEFINE_ERROR(IoError);

#undef NEUROME_DEFINE_ERROR

/// Raised while decoding a binary file; carries the offending byte offset.
class MalformedFile : public Error {
public:
    MalformedFile(const std::string& what, std::size_t offset)
        : Error("MalformedFile at byte " + std::to_string(offset) + ": " + what), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

}  // namespace neurome
