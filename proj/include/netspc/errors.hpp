#pragma once

#include <stdexcept>
#include <string>

namespace netspc {

class Error : public std::runtime_error
{
 public:
    using std::runtime_error::runtime_error;
};

/// A has an eigenvalue outside the closed unit disc, or a defective one on it.
class NotLyapunovStable : public Error
{
 public:
    using Error::Error;
};

/// (A_o, B_o) never reaches full rank within the allowed number of steps.
class NotReachable : public Error
{
 public:
    using Error::Error;
};

class StructureViolation : public Error
{
 public:
    using Error::Error;
};

class DimensionMismatch : public Error
{
 public:
    using Error::Error;
};

class NotPositiveDefinite : public Error
{
 public:
    using Error::Error;
};

/// The assembled quadratic form has a clearly negative eigenvalue.
class IndefiniteL : public Error
{
 public:
    using Error::Error;
};

class SolverError : public Error
{
 public:
    using Error::Error;
};

class ConfigError : public Error
{
 public:
    using Error::Error;
};

class BufferUnderrun : public Error
{
 public:
    using Error::Error;
};

inline void require_dims(bool ok, const std::string& what)
{
    if (!ok) throw DimensionMismatch(what);
}

}  // namespace netspc
