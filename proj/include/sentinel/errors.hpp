#pragma once

#include <stdexcept>
#include <string>

namespace sentinel {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Input dimensions do not match what an operation expects.
class ShapeError : public Error {
  public:
    ShapeError(std::string axis, const std::string &what)
        : Error("shape mismatch on " + axis + ": " + what), axis_(std::move(axis)) {}

    const std::string &axis() const noexcept { return axis_; }

  private:
    std::string axis_;
};

/// A NaN or infinity appeared while evaluating a named layer.
class NumericFault : public Error {
  public:
    explicit NumericFault(std::string layer)
        : Error("non-finite value in layer '" + layer + "'"), layer_(std::move(layer)) {}

    const std::string &layer() const noexcept { return layer_; }

  private:
    std::string layer_;
};

class InvalidArgument : public Error {
  public:
    using Error::Error;
};

/// Malformed or unsupported file content.
class FormatError : public Error {
  public:
    using Error::Error;
};

/// Text input rejected at a specific line.
class ParseError : public FormatError {
  public:
    ParseError(std::size_t line, const std::string &what)
        : FormatError("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

  private:
    std::size_t line_;
};

class MissingSignal : public Error {
  public:
    explicit MissingSignal(std::string name)
        : Error("missing signal '" + name + "'"), name_(std::move(name)) {}

    const std::string &name() const noexcept { return name_; }

  private:
    std::string name_;
};

class ConstantSignal : public Error {
  public:
    explicit ConstantSignal(std::string name)
        : Error("signal '" + name + "' is constant over the fitting data"), name_(std::move(name)) {}

    const std::string &name() const noexcept { return name_; }

  private:
    std::string name_;
};

class DuplicateModel : public Error {
  public:
    explicit DuplicateModel(const std::string &id) : Error("model id '" + id + "' already loaded") {}
};

class EmptySplit : public Error {
  public:
    explicit EmptySplit(const std::string &which) : Error("empty " + which + " split") {}
};

/// A file or directory named on input could not be opened.
class PathError : public Error {
  public:
    PathError(std::string path, const std::string &what)
        : Error(what + " '" + path + "'"), path_(std::move(path)) {}

    const std::string &path() const noexcept { return path_; }

  private:
    std::string path_;
};

} // namespace sentinel
