# Runs one test of learner code. The request arrives on stdin as JSON:
# {"source", "entry", "args", "nonce", "deny"}. The verdict is written to the
# real stdout as a single line prefixed with the nonce.
import io
import json
import os
import sys
import traceback


def _install(deny):
    allowed = tuple(sorted({os.path.realpath(p) for p in sys.path if p}))
    denied = tuple(os.path.realpath(p) for p in deny)
    devices = ("/dev/null", "/dev/urandom", "/dev/random")
    blocked_events = (
        "subprocess.", "os.system", "os.exec", "os.posix_spawn", "os.spawn", "os.fork",
        "os.forkpty", "os.kill", "os.killpg", "socket.", "ctypes.", "os.remove", "os.unlink",
        "os.rename", "os.rmdir", "os.mkdir", "os.symlink", "os.link", "os.truncate",
        "os.chmod", "os.chown", "os.utime", "os.chdir", "os.putenv", "os.unsetenv",
        "shutil.", "sys.addaudithook", "sys._getframe", "sys.settrace", "sys.setprofile",
        "pty.", "webbrowser.", "urllib.", "http.", "ftplib.", "smtplib.", "mmap.",
        "resource.setrlimit", "gc.get_objects", "gc.get_referrers", "gc.get_referents",
    )
    blocked_modules = frozenset((
        "gc", "ctypes", "_ctypes", "subprocess", "_posixsubprocess", "socket", "_socket",
        "multiprocessing", "_multiprocessing", "mmap", "pty", "ssl", "_ssl",
    ))
    write_flags = os.O_WRONLY | os.O_RDWR | os.O_CREAT | os.O_TRUNC | os.O_APPEND

    def inside(path, roots):
        return any(path == root or path.startswith(root + os.sep) for root in roots)

    def readable(path):
        if isinstance(path, int):
            return True
        path = os.path.realpath(os.fsdecode(path))
        if inside(path, denied):
            return False
        return path in devices or inside(path, allowed)

    def hook(event, args):
        if event == "open":
            path, mode, flags = args
            writing = (isinstance(mode, str) and any(c in mode for c in "wax+")) or (
                isinstance(flags, int) and flags & write_flags
            )
            if writing or not readable(path):
                raise PermissionError("sandbox: file access denied")
        elif event == "import":
            if args[0] in blocked_modules:
                raise ImportError("sandbox: module %s is not allowed" % args[0])
        elif event in ("os.listdir", "os.scandir", "glob.glob"):
            if args and args[0] is not None and not readable(args[0]):
                raise PermissionError("sandbox: directory listing denied")
        elif event.startswith(blocked_events):
            raise PermissionError("sandbox: %s is not allowed" % event)

    sys.addaudithook(hook)


def _main():
    request = json.loads(sys.stdin.read())
    sys.stdin = io.StringIO()
    nonce = request["nonce"]
    out = sys.stdout

    def emit(verdict):
        out.write(nonce + json.dumps(verdict, default=repr) + "\n")
        out.flush()

    _install(request["deny"])
    sys.stdout = io.StringIO()
    try:
        namespace = {"__name__": "solution"}
        exec(compile(request["source"], "solution.py", "exec"), namespace)
        entry = namespace.get(request["entry"])
        if not callable(entry):
            raise NameError("function %r is not defined" % request["entry"])
        result = entry(*request["args"])
    except BaseException:
        text = traceback.format_exc()
        sys.stderr.write(text)
        emit({"ok": False, "error": text[-2000:]})
        sys.exit(1)
    emit({"ok": True, "result": result})


_main()
