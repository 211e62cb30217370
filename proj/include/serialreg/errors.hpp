#pragma once

#include <stdexcept>
#include <string>

namespace serialreg {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// geometry
class SingularTransform : public Error {
public:
  using Error::Error;
};
class InsufficientPoints : public Error {
public:
  using Error::Error;
};
class DegenerateConfiguration : public Error {
public:
  using Error::Error;
};

// feature stage
class DescriptorLengthMismatch : public Error {
public:
  using Error::Error;
};
class InsufficientMatches : public Error {
public:
  using Error::Error;
};
class NoConsensus : public Error {
public:
  using Error::Error;
};

struct Stage1Diagnostics {
  int keypoints_fixed = 0;
  int keypoints_moving = 0;
  int match_count = 0;
  int best_inlier_count = 0;
};

class Stage1Failure : public Error {
public:
  Stage1Failure(const std::string &msg, Stage1Diagnostics diag)
      : Error(msg), diagnostics(diag) {}
  Stage1Diagnostics diagnostics;
};

// intensity stage
class ShapeMismatch : public Error {
public:
  using Error::Error;
};
class EmptyOverlap : public Error {
public:
  using Error::Error;
};
class DegenerateVariance : public Error {
public:
  using Error::Error;
};

// series
class EmptySeries : public Error {
public:
  using Error::Error;
};
class LengthMismatch : public Error {
public:
  using Error::Error;
};
class PairRegistrationFailure : public Error {
public:
  using Error::Error;
};

// metrics
class NoMiddleAnnotation : public Error {
public:
  using Error::Error;
};

// pipeline / IO
class ParseError : public Error {
public:
  using Error::Error;
};
class MissingImage : public Error {
public:
  using Error::Error;
};
class DecodeError : public Error {
public:
  using Error::Error;
};
class WriteError : public Error {
public:
  using Error::Error;
};

} // namespace serialreg
