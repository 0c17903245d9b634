# Tests module