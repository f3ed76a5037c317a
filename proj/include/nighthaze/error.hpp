#pragma once

#include <stdexcept>
#include <string>

namespace nighthaze {

// Every failure raised by the library derives from Error so callers (and the
// CLI) can catch one type and still branch on the concrete category.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NotFoundError : public Error { public: using Error::Error; };
class FormatError : public Error { public: using Error::Error; };
class IoError : public Error { public: using Error::Error; };
class DimensionError : public Error { public: using Error::Error; };
class ParameterError : public Error { public: using Error::Error; };
class NumericError : public Error { public: using Error::Error; };
class ResourceError : public Error { public: using Error::Error; };
class DataError : public Error { public: using Error::Error; };
class ShapeError : public Error { public: using Error::Error; };

}  // namespace nighthaze
