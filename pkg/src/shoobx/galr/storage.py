###############################################################################
#
# Copyright 2026 by Shoobx, Inc.
#
###############################################################################
"""Artifact Stores

Checkpoints, datasets, metrics and demos are named blobs. A store is either
a local directory or an S3 prefix; callers only ever see relative names
such as ``checkpoints/best.bin``.
"""
import logging
import os
import tempfile
import urllib.parse

import boto3
import botocore.exceptions

from shoobx.galr.errors import GaLRError, ValidationError

log = logging.getLogger("shoobx.galr.storage")


class StoreError(GaLRError):
    pass


def _check_name(name):
    parts = name.split("/")
    if not name or name.startswith("/") or ".." in parts or "" in parts:
        raise ValidationError(f"invalid artifact name {name!r}", path="name")
    return name


class LocalStore:
    def __init__(self, directory):
        self.directory = os.path.abspath(directory)

    def __repr__(self):
        return f"<LocalStore {self.directory}>"

    def _path(self, name):
        return os.path.join(self.directory, *_check_name(name).split("/"))

    def write_bytes(self, name, data):
        path = self._path(name)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        # Readers never see a partially written file.
        fd, tmp_path = tempfile.mkstemp(dir=os.path.dirname(path), prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as file:
                file.write(data)
            os.replace(tmp_path, path)
        except BaseException:
            if os.path.exists(tmp_path):
                os.unlink(tmp_path)
            raise

    def read_bytes(self, name):
        try:
            with open(self._path(name), "rb") as file:
                return file.read()
        except FileNotFoundError:
            raise StoreError(f"no artifact {name!r} in {self.directory}")

    def exists(self, name):
        return os.path.isfile(self._path(name))

    def names(self, prefix=""):
        found = []
        for root, _, files in os.walk(self.directory):
            rel = os.path.relpath(root, self.directory)
            for filename in files:
                if filename.startswith(".tmp-"):
                    continue
                name = filename
                if rel != ".":
                    name = f"{rel.replace(os.sep, '/')}/{filename}"
                if name.startswith(prefix):
                    found.append(name)
        return sorted(found)

    def uri(self, name):
        return self._path(name)


class S3Store:
    def __init__(self, bucket, prefix="", client=None):
        self.bucket = bucket
        self.prefix = prefix.strip("/")
        self.client = client or boto3.client("s3")

    def __repr__(self):
        return f"<S3Store s3://{self.bucket}/{self.prefix}>"

    def _key(self, name):
        _check_name(name)
        return f"{self.prefix}/{name}" if self.prefix else name

    def write_bytes(self, name, data):
        self.client.put_object(Bucket=self.bucket, Key=self._key(name), Body=data)

    def read_bytes(self, name):
        try:
            response = self.client.get_object(Bucket=self.bucket, Key=self._key(name))
        except botocore.exceptions.ClientError as err:
            raise StoreError(f"cannot read s3://{self.bucket}/{self._key(name)}: {err}")
        return response["Body"].read()

    def exists(self, name):
        try:
            self.client.head_object(Bucket=self.bucket, Key=self._key(name))
        except botocore.exceptions.ClientError as err:
            code = err.response.get("Error", {}).get("Code")
            if code in ("404", "NoSuchKey", "NotFound"):
                return False
            raise StoreError(f"cannot stat s3://{self.bucket}/{self._key(name)}: {err}")
        return True

    def names(self, prefix=""):
        base = f"{self.prefix}/" if self.prefix else ""
        paginator = self.client.get_paginator("list_objects_v2")
        found = []
        for page in paginator.paginate(Bucket=self.bucket, Prefix=base + prefix):
            for item in page.get("Contents", []):
                found.append(item["Key"][len(base) :])
        return sorted(found)

    def uri(self, name):
        return f"s3://{self.bucket}/{self._key(name)}"


def open_store(location):
    """A store for a directory path or an ``s3://bucket/prefix`` URI."""
    if location is None:
        raise ValidationError("no artifact location given")
    parsed = urllib.parse.urlparse(location)
    if parsed.scheme == "s3":
        if not parsed.netloc:
            raise ValidationError(f"missing bucket in {location!r}")
        return S3Store(parsed.netloc, parsed.path)
    if parsed.scheme and len(parsed.scheme) > 1:
        raise ValidationError(f"unsupported store scheme {parsed.scheme!r}")
    return LocalStore(location)
