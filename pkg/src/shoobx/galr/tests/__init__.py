# Make a package.
