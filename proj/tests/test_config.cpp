#include <catch2/catch_amalgamated.hpp>
#include "binarykin/config.hpp"
#include "binarykin/io.hpp"
