// Access counter CGI. State is count.txt in the working directory (the
// script's own directory), created as 0 when absent.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <string>

namespace {

int fail(const char* what) {
    std::fprintf(stderr, "counter: %s: %s\n", what, std::strerror(errno));
    return 1;
}

}  // namespace

int main() {
    int fd = ::open("count.txt", O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd < 0) return fail("open count.txt");
    if (::flock(fd, LOCK_EX) != 0) return fail("flock");

    std::string text;
    char buf[64];
    ssize_t n;
    while ((n = ::read(fd, buf, sizeof buf)) > 0) text.append(buf, static_cast<std::size_t>(n));
    if (n < 0) return fail("read");
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r' || text.back() == ' ')) text.pop_back();

    unsigned long long value = 0;
    for (char c : text) {
        if (c < '0' || c > '9' || value > 1'000'000'000'000'000ULL) {
            std::fprintf(stderr, "counter: count.txt does not hold a number\n");
            return 1;
        }
        value = value * 10 + static_cast<unsigned>(c - '0');
    }
    ++value;

    std::string next = std::to_string(value) + "\n";
    if (::lseek(fd, 0, SEEK_SET) < 0 || ::ftruncate(fd, 0) != 0) return fail("truncate");
    if (::write(fd, next.data(), next.size()) != static_cast<ssize_t>(next.size())) return fail("write");
    ::close(fd);  // releases the lock

    std::printf("Content-Type: text/plain\r\n\r\n%llu", value);
    return 0;
}
