#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace attrib3d {

// Base for every error the library raises. Callers that only care about
// "bad input vs. bug" can catch this one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("PLY parse error at line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IndexError : public Error {
 public:
  IndexError(std::size_t face, const std::string& what)
      : Error("face " + std::to_string(face) + ": " + what), face_(face) {}
  std::size_t face() const noexcept { return face_; }

 private:
  std::size_t face_;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

class EmptyMeshError : public Error {
 public:
  EmptyMeshError() : Error("mesh has no vertices") {}
};

class DegenerateError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class SizeError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class SplitError : public Error {
 public:
  using Error::Error;
};

class LabelSpaceError : public Error {
 public:
  using Error::Error;
};

}  // namespace attrib3d
