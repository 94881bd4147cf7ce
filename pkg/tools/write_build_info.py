"""Stamp laneattn/build_info.json with the build time and package version.

`laneattn version` prints the stamp and warns when it was written for another version.
"""
import argparse
import datetime
import json
import os
import re

HERE = os.path.dirname(os.path.abspath(__file__))
PACKAGE_DIR = os.path.join(os.path.dirname(HERE), 'laneattn')


def package_version(package_dir=PACKAGE_DIR):
    # read, not import: the stamp is written before dependencies are installed
    with open(os.path.join(package_dir, '__init__.py'), encoding='utf-8') as f:
        match = re.search(r'^__version__ = "([^"]+)"', f.read(), re.MULTILINE)
    return match.group(1) if match else 'unknown'


def write_build_info(target, now=None):
    now = now or datetime.datetime.now(datetime.timezone.utc)
    info = {
        'build_time': now.strftime('%Y-%m-%dT%H:%M:%SZ'),
        'version': package_version(),
    }
    os.makedirs(os.path.dirname(os.path.abspath(target)), exist_ok=True)
    with open(target, 'w', encoding='utf-8') as f:
        json.dump(info, f, indent=2, sort_keys=True)
    return info


def main(argv=None):
    parser = argparse.ArgumentParser(description='write the laneattn build stamp')
    parser.add_argument('--out', default=os.path.join(PACKAGE_DIR, 'build_info.json'))
    args = parser.parse_args(argv)
    info = write_build_info(args.out)
    print(f"Wrote {args.out} (laneattn {info['version']})")
    return 0


if __name__ == '__main__':
    raise SystemExit(main())
