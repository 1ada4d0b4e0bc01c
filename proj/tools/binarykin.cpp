#include "binarykin/config.hpp"
int main() { return 0; }
