#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gsno {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A query fell outside the (x, nu) box a family or table is defined on.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// The marching solver could not proceed (degenerate diagonal, bad residual).
class SolverError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Grid sizes or array lengths disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A binary file could not be decoded. `offset` is the byte position where
/// decoding stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// The scheduling variable u(0,t) left the admissible box [-B_nu, B_nu].
class DomainExit : public Error {
 public:
  DomainExit(double t, double nu)
      : Error("scheduling variable left its box at t=" + std::to_string(t) +
              " (u(0,t)=" + std::to_string(nu) + ")"),
        t_(t), nu_(nu) {}

  double time() const noexcept { return t_; }
  double nu() const noexcept { return nu_; }

 private:
  double t_;
  double nu_;
};

/// The state exceeded the blow-up threshold.
class BlowUp : public Error {
 public:
  BlowUp(double t, double max_abs)
      : Error("state blew up at t=" + std::to_string(t) + " (max|u|=" +
              std::to_string(max_abs) + ")"),
        t_(t) {}

  double time() const noexcept { return t_; }

 private:
  double t_;
};

}  // namespace gsno
