#pragma once

#include <stdexcept>
#include <string>

namespace cw {

// Base for every error raised by the control stack.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Host tried to drive the data lines while the latch faces device-to-host.
class DirectionError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class BusBusyError : public Error {
 public:
  using Error::Error;
};

class TimeoutError : public Error {
 public:
  using Error::Error;
};

class InvalidCommandError : public Error {
 public:
  using Error::Error;
};

class ChannelError : public Error {
 public:
  using Error::Error;
};

class StorageError : public Error {
 public:
  using Error::Error;
};

class AclError : public Error {
 public:
  using Error::Error;
};

class ConflictError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class BindError : public Error {
 public:
  using Error::Error;
};

}  // namespace cw
