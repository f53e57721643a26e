#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ctdg {

// Every failure raised by the library derives from Error. The CLI maps the
// category onto its exit code.
class Error : public std::runtime_error {
 public:
  enum class Category { config, data, runtime };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(Category::config, what) {}
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(Category::data, "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& what) : Error(Category::data, what) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(Category::data, what) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(Category::data, what) {}
};

class RangeError : public Error {
 public:
  explicit RangeError(const std::string& what) : Error(Category::data, what) {}
};

class IndexError : public Error {
 public:
  explicit IndexError(const std::string& what) : Error(Category::runtime, what) {}
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(Category::runtime, what) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(Category::runtime, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(Category::runtime, what) {}
};

class EvaluationError : public Error {
 public:
  explicit EvaluationError(const std::string& what) : Error(Category::runtime, what) {}
};

}  // namespace ctdg
