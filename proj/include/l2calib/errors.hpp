#pragma once

#include <stdexcept>
#include <string>

namespace l2calib {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NotFound : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct RangeError : Error { using Error::Error; };
struct ArgumentError : Error { using Error::Error; };
struct NumericalError : Error { using Error::Error; };
struct SolverError : Error { using Error::Error; };
struct DesignError : Error { using Error::Error; };
struct CriterionError : Error { using Error::Error; };
struct OptError : Error { using Error::Error; };
struct SingularError : Error { using Error::Error; };
struct DomainError : Error { using Error::Error; };
struct DegenerateGradient : Error { using Error::Error; };
struct StudyError : Error { using Error::Error; };

}  // namespace l2calib
