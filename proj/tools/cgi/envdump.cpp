// Diagnostic CGI: prints its environment (sorted), working directory and stdin.

#include <unistd.h>

#include <algorithm>
#include <iostream>
#include <iterator>
#include <string>
#include <vector>

extern char** environ;

int main(int argc, char** argv) {
    (void)argc;
    std::vector<std::string> vars;
    for (char** e = environ; *e; ++e) vars.emplace_back(*e);
    std::sort(vars.begin(), vars.end());

    std::string body((std::istreambuf_iterator<char>(std::cin)), std::istreambuf_iterator<char>());
    std::cout << "Content-Type: text/plain\r\n\r\n";
    for (const auto& v : vars) std::cout << v << "\n";
    char cwd[4096];
    std::cout << "cwd=" << (::getcwd(cwd, sizeof cwd) ? cwd : "?") << "\n";
    std::cout << "argv0=" << argv[0] << "\n";
    std::cout << "stdin=" << body;
    return 0;
}
