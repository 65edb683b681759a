#pragma once

#include <stdexcept>
#include <string>

namespace gridstress {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Case text could not be parsed (missing section, bad token, wrong column count).
class MalformedCase : public Error {
public:
    using Error::Error;
};

/// Parsed case violates a structural invariant (dangling branch, duplicate bus, no generator).
class InvalidTopology : public Error {
public:
    using Error::Error;
};

/// The load-bus susceptance block fails the Metzler/Hurwitz or connectivity requirements.
class AssumptionViolated : public Error {
public:
    using Error::Error;
};

/// A linear system required by the model is numerically singular.
class SingularSystem : public Error {
public:
    using Error::Error;
};

/// Security thresholds define an empty band.
class InfeasibleBox : public Error {
public:
    using Error::Error;
};

/// Optimization problem has no feasible point.
class Infeasible : public Error {
public:
    using Error::Error;
};

/// Argument outside a function's mathematical domain.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Evaluation would overflow double range.
class OverflowError : public Error {
public:
    using Error::Error;
};

/// Coupled power flow failed to converge while simulating the plant.
class PlantDiverged : public Error {
public:
    using Error::Error;
};

/// A condition that should be impossible given the inputs (e.g. unbounded LP over boxes).
class InternalError : public Error {
public:
    using Error::Error;
};

} // namespace gridstress
