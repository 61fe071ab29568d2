"""Check every fit and truth document under a results directory against its schema.

Usage:
    python scripts/validate_fit_documents.py results/
"""

import argparse
import os
import sys
from pathlib import Path
from typing import List, Optional

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from tools.connectome_subtyper.errors import ValidationError
from tools.connectome_subtyper.msfc_io import FIT_FORMAT, check_document, load_json


def schema_for(document) -> Optional[str]:
    """Schema name of a document, or None for documents without one."""
    if not isinstance(document, dict):
        return None
    if document.get('format') == FIT_FORMAT:
        return 'fit-document'
    if 'subtype_of' in document and 'block_of' in document:
        return 'truth'
    return None


def validate_directory(root: str) -> List[str]:
    """Validate every ``.json`` file below ``root``.

    Returns:
        One error line per invalid document.
    """
    errors = []
    for dirpath, _, filenames in os.walk(root):
        for filename in sorted(filenames):
            if not filename.endswith('.json'):
                continue
            path = os.path.join(dirpath, filename)
            try:
                document = load_json(path)
                name = schema_for(document)
                if name is None:
                    continue
                check_document(document, name)
                print(f'  [PASS] {path} ({name})')
            except ValidationError as e:
                errors.append(f'{path}: {e}')
    return errors


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description='Validate fit and truth documents against their schemas')
    parser.add_argument('root', help='Directory to scan')
    args = parser.parse_args(argv)

    errors = validate_directory(args.root)
    if errors:
        print(f'\n✗ {len(errors)} invalid document(s):')
        for line in errors:
            print(f'  - {line}')
        return 1
    print('\n✓ All documents are valid!')
    return 0


if __name__ == '__main__':
    sys.exit(main())
